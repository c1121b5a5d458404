#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "hyperinv/cli.hpp"
#include "hyperinv/config.hpp"
#include "hyperinv/io.hpp"
#include "hyperinv/rng.hpp"

using namespace hyperinv;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "hyperinv_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

const char* kSmallConfig =
    "toy.resolution = 16\n"
    "toy.w_dim = 8\n"
    "toy.channel_base = 8\n"
    "toy.appearance_channels = 4\n"
    "hyper.D = 4\n"
    "hyper.F = 8\n"
    "train.batch_size_warm = 2\n"
    "train.batch_size_adv = 2\n"
    "train.warmup_iters = 2\n"
    "train.total_iters = 4\n"
    "train.log_interval = 2\n"
    "pretrain.iters = 2\n"
    "pretrain.batch_size = 2\n"
    "data.train_size = 4\n"
    "data.test_size = 2\n"
    "bench.latent_steps = 2\n"
    "bench.finetune_steps = 2\n"
    "metrics.ms_ssim_scales = 2\n";

// Trains the small pipeline once and shares the artifacts.
struct Pipeline {
  std::string cfg = path("small.cfg");
  std::string pre = path("pre.hta"), p1 = path("p1.hta"), p2 = path("p2.hta");
  std::string img_a = path("a.ppm"), img_b = path("b.ppm");
  std::string res_a = path("res_a.hta"), res_b = path("res_b.hta"), dirs = path("dirs.hta");

  Pipeline() {
    write_file_atomic(cfg, kSmallConfig);
    expect_ok({"pretrain", "--config", cfg, "--out", pre});
    expect_ok({"train-phase1", "--config", cfg, "--generator", pre, "--out", p1});
    expect_ok({"train-phase2", "--config", cfg, "--generator", pre, "--phase1", p1, "--out", p2});
    image_write_ppm(img_a, Rng(1).uniform({3, 16, 16}, -1.0, 1.0));
    image_write_ppm(img_b, Rng(2).uniform({3, 16, 16}, -1.0, 1.0));
    expect_ok({"invert", "--generator", pre, "--encoder", p2, "--input", img_a, "--out", res_a});
    expect_ok({"invert", "--generator", pre, "--encoder", p2, "--input", img_b, "--out", res_b});
    expect_ok({"directions", "--config", cfg, "--generator", pre, "--k", "3", "--n", "200", "--out",
               dirs});
  }

  static void expect_ok(const std::vector<std::string>& args) {
    const Outcome o = cli(args);
    ASSERT_EQ(o.code, 0) << args[0] << ": " << o.err;
  }
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

}  // namespace

TEST(Cli, DumpConfigPrintsDefaultsThatReparse) {
  const Outcome o = cli({"dump-config"});
  EXPECT_EQ(o.code, 0);
  EXPECT_EQ(parse_config(o.out), TrainConfig{});
  EXPECT_NE(o.out.find("hyper.D = 64"), std::string::npos);
}

TEST(Cli, DumpConfigAppliesOverridesAndSeed) {
  const Outcome o = cli({"dump-config", "--set", "hyper.D=16", "--set", "profile=church-analog",
                         "--seed", "9"});
  ASSERT_EQ(o.code, 0) << o.err;
  TrainConfig want;
  apply_profile(want, Profile::ChurchAnalog);
  want.hyper.hidden_dim = 16;
  want.seed = 9;
  EXPECT_EQ(parse_config(o.out), want);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_NE(cli({"frobnicate"}).err.find("unknown command"), std::string::npos);
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"invert"}).code, 1);
  EXPECT_EQ(cli({"dump-config", "--bogus"}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, RuntimeErrorsExitTwo) {
  EXPECT_EQ(cli({"dump-config", "--set", "toy.nonexistent=1"}).code, 2);
  const std::string bad = path("bad.hta");
  write_file_atomic(bad, "not an archive");
  const Outcome o = cli({"diffmap", "--result", bad, "--out", path("bad.pgm")});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("error"), std::string::npos);
}

TEST(Cli, GradcheckSuitePasses) {
  const Outcome o = cli({"gradcheck"});
  EXPECT_EQ(o.code, 0) << o.out;
  EXPECT_EQ(o.out.find("FAIL"), std::string::npos);
}

TEST(Cli, PretrainIsReproducible) {
  const Pipeline& p = pipeline();
  const std::string again = path("pre_again.hta");
  ASSERT_EQ(cli({"pretrain", "--config", p.cfg, "--out", again}).code, 0);
  EXPECT_EQ(read_file(again), read_file(p.pre));
  const std::string other = path("pre_seed.hta");
  ASSERT_EQ(cli({"pretrain", "--config", p.cfg, "--seed", "5", "--out", other}).code, 0);
  EXPECT_NE(read_file(other), read_file(p.pre));
}

TEST(Cli, InvertIsReproducible) {
  const Pipeline& p = pipeline();
  const std::string again = path("res_again.hta");
  const Outcome o = cli({"invert", "--generator", p.pre, "--encoder", p.p2, "--input", p.img_a,
                         "--out", again, "--images", path("imgs")});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto a = archive_read(p.res_a), b = archive_read(again);
  for (const auto& [name, t] : a) {
    if (name != "result.seconds") {
      EXPECT_TRUE(bit_equal(t, b.at(name))) << name;
    }
  }
  EXPECT_TRUE(fs::exists(path("imgs/a.xhat.ppm")));
  EXPECT_TRUE(fs::exists(path("imgs/a.xw.ppm")));
}

TEST(Cli, EditInterpolateStatsDiffmap) {
  const Pipeline& p = pipeline();
  const std::string edited = path("edit.ppm"), mid = path("mid.ppm"), map = path("map.pgm");
  Outcome o = cli({"edit", "--generator", p.pre, "--encoder", p.p2, "--result", p.res_a,
                   "--direction", p.dirs, "--index", "1", "--gamma", "2", "--out", edited});
  EXPECT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(image_read_ppm(edited).shape(), (Shape{3, 16, 16}));
  o = cli({"interpolate", "--generator", p.pre, "--encoder", p.p2, "--a", p.res_a, "--b", p.res_b,
           "--t", "0.25", "--out", mid});
  EXPECT_EQ(o.code, 0) << o.err;
  o = cli({"interpolate", "--generator", p.pre, "--encoder", p.p2, "--a", p.res_a, "--b", p.res_b,
           "--t", "1.5", "--out", mid});
  EXPECT_EQ(o.code, 2);
  o = cli({"stats", "--config", p.cfg, "--generator", p.pre, "--result", p.res_a, "--result",
           p.res_b});
  EXPECT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.out.rfind("layer,role,resolution,mean_abs\n", 0), 0u);
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 1 + 6);
  o = cli({"diffmap", "--result", p.res_a, "--out", map, "--archive", path("map.hta")});
  EXPECT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(archive_read(path("map.hta")).at("diffmap").shape(), (Shape{16, 16}));
}

TEST(Cli, BenchWritesCsv) {
  const Pipeline& p = pipeline();
  Outcome o = cli({"bench", "--generator", p.pre, "--encoder", p.p2, "--strategies",
                   "phase1-only,full"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.out.rfind("strategy,l2,lpips_proxy,id_proxy,psnr,ms_ssim,seconds\n", 0), 0u);
  EXPECT_NE(o.out.find("\nfull,"), std::string::npos);
  o = cli({"bench", "--generator", p.pre, "--encoder", p.p2, "--strategies", "magic"});
  EXPECT_EQ(o.code, 2);
}

TEST(Cli, MismatchedGeneratorIsRejected) {
  const Pipeline& p = pipeline();
  const std::string other = path("pre_other.hta");
  ASSERT_EQ(cli({"pretrain", "--config", p.cfg, "--seed", "3", "--out", other}).code, 0);
  const Outcome o = cli({"invert", "--generator", other, "--encoder", p.p2, "--input", p.img_a,
                         "--out", path("x.hta")});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("generator"), std::string::npos);
}
