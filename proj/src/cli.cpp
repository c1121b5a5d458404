#include "hyperinv/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "hyperinv/error.hpp"
#include "hyperinv/gradsuite.hpp"
#include "hyperinv/inversion.hpp"
#include "hyperinv/io.hpp"
#include "hyperinv/training.hpp"

namespace hyperinv {

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Master seed for all randomness");
  sub->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "key=value override (repeatable)");
}

void apply_overrides(TrainConfig& cfg, const Common& c) {
  // A profile resets loss weights, so it goes before any other override.
  std::vector<std::string> sets = c.sets;
  std::stable_partition(sets.begin(), sets.end(),
                        [](const std::string& s) { return s.starts_with("profile="); });
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
}

TrainConfig resolve_config(const Common& c) {
  TrainConfig cfg = c.config.empty() ? TrainConfig{} : parse_config(read_file(c.config));
  apply_overrides(cfg, c);
  return cfg;
}

// Inference commands default to the configuration an encoder was trained with.
TrainConfig resolve_config(const Common& c, const NamedTensors& encoder_ckpt) {
  if (!c.config.empty()) return resolve_config(c);
  TrainConfig cfg = parse_config(get_meta(encoder_ckpt).config);
  apply_overrides(cfg, c);
  return cfg;
}

void write_text(const std::string& path, std::string_view text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  write_file_atomic(path, text);
}

std::string hex(std::uint64_t v) { return hex64(v); }

Tensor read_images(const std::vector<std::string>& paths) {
  std::vector<Tensor> imgs;
  for (const std::string& p : paths) imgs.push_back(image_read_ppm(p));
  return stack(imgs);
}

struct TrainSinks {
  std::ostream& out;
  std::ofstream log;
  std::size_t interval;
  std::size_t last;

  TrainSinks(std::ostream& o, const std::string& log_path, std::size_t every, std::size_t total,
             bool append)
      : out(o), interval(every), last(total) {
    if (!log_path.empty()) {
      log.open(log_path, append ? std::ios::app : std::ios::trunc);
      if (!log) throw Error("cannot open log file " + log_path);
      if (!append) log << log_csv_header() << '\n';
    }
  }

  LogSink sink() {
    return [this](const TrainLogRow& row) {
      const std::string line = log_csv_row(row);
      if (log.is_open()) log << line << '\n' << std::flush;
      if ((interval && row.iteration % interval == 0) || row.iteration + 1 == last)
        out << line << '\n' << std::flush;
    };
  }
};

template <class Trainer>
void run_trainer(Trainer& t, const TrainConfig& cfg, std::size_t total, const std::string& out_path,
                 const std::string& log_path, bool resumed, std::ostream& out) {
  TrainSinks sinks(out, log_path, cfg.train.log_interval, total, resumed);
  out << log_csv_header() << '\n';
  t.run(sinks.sink(), [&](std::size_t) { archive_write(out_path, t.checkpoint()); });
  archive_write(out_path, t.checkpoint());
}

Models models_from(const TrainConfig& cfg, const std::string& generator, const NamedTensors& enc) {
  return load_models(cfg, archive_read(generator), enc);
}

void print_metrics(std::ostream& out, const char* label, const MetricsRow& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: l2 %.6g psnr %s ms_ssim %.6g lpips_proxy %.6g id_proxy %.6g\n",
                label, m.l2, std::isinf(m.psnr) ? "inf" : std::to_string(m.psnr).c_str(), m.ms_ssim,
                m.lpips_proxy, m.id_proxy);
  out << buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-phase encoder and hypernetwork GAN inversion on a toy generator", "hyperinv"};
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  std::map<std::string, Common> common;
  auto sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    add_common(s, common[name]);
    return s;
  };

  std::string out_path, resume, log_path, generator, phase1, encoder, result, result_b, direction;
  std::string strategies, mode = "dual", archive_out;
  std::vector<std::string> inputs, results;
  std::size_t index = 0, row = 0, row_b = 0, k = 5, n = 10000, cases = 5, limit = 0;
  std::optional<double> gamma;
  double t = 0.5, scale = 1.0;

  CLI::App* pretrain = sub("pretrain", "Adversarially pretrain the toy generator");
  pretrain->add_option("--out", out_path, "Checkpoint archive")->required();
  pretrain->add_option("--resume", resume, "Resume from a checkpoint")->check(CLI::ExistingFile);
  pretrain->add_option("--log", log_path, "Training CSV log");

  CLI::App* p1 = sub("train-phase1", "Train the content encoder E1");
  p1->add_option("--generator", generator, "Pretraining checkpoint")->required()->check(CLI::ExistingFile);
  p1->add_option("--out", out_path, "Checkpoint archive")->required();
  p1->add_option("--resume", resume, "Resume from a checkpoint")->check(CLI::ExistingFile);
  p1->add_option("--log", log_path, "Training CSV log");

  CLI::App* p2 = sub("train-phase2", "Train E2, the hypernetworks and D");
  p2->add_option("--generator", generator, "Pretraining checkpoint")->required()->check(CLI::ExistingFile);
  p2->add_option("--phase1", phase1, "Phase I checkpoint")->required()->check(CLI::ExistingFile);
  p2->add_option("--out", out_path, "Checkpoint archive")->required();
  p2->add_option("--resume", resume, "Resume from a checkpoint")->check(CLI::ExistingFile);
  p2->add_option("--log", log_path, "Training CSV log");

  auto add_models = [&](CLI::App* s, const char* what) {
    s->add_option("--generator", generator, "Pretraining checkpoint")->required()->check(CLI::ExistingFile);
    s->add_option("--encoder", encoder, what)->required()->check(CLI::ExistingFile);
  };

  CLI::App* inv = sub("invert", "Invert PPM images in one forward pass");
  add_models(inv, "Phase II checkpoint");
  inv->add_option("--input", inputs, "P6 images")->required()->check(CLI::ExistingFile);
  inv->add_option("--out", out_path, "Result archive")->required();
  inv->add_option("--images", archive_out, "Directory for x_hat / x_hat_w PPMs");

  CLI::App* ed = sub("edit", "Edit an inversion along a latent direction");
  add_models(ed, "Phase II checkpoint");
  ed->add_option("--result", result, "Result archive")->required()->check(CLI::ExistingFile);
  ed->add_option("--direction", direction, "Direction archive")->required()->check(CLI::ExistingFile);
  ed->add_option("--index", index, "Direction index");
  ed->add_option("--gamma", gamma, "Edit magnitude (default edit.edit_gamma)");
  ed->add_option("--row", row, "Result row");
  ed->add_option("--out", out_path, "Output PPM")->required();

  CLI::App* ip = sub("interpolate", "Interpolate two inversions");
  add_models(ip, "Phase II checkpoint");
  ip->add_option("--a", result, "First result archive")->required()->check(CLI::ExistingFile);
  ip->add_option("--b", result_b, "Second result archive")->required()->check(CLI::ExistingFile);
  ip->add_option("--row-a", row, "Row of the first result");
  ip->add_option("--row-b", row_b, "Row of the second result");
  ip->add_option("--t", t, "Interpolation weight in [0,1]");
  ip->add_option("--mode", mode, "dual or latent-only")->check(CLI::IsMember({"dual", "latent-only"}));
  ip->add_option("--out", out_path, "Output PPM")->required();

  CLI::App* be = sub("bench", "Reconstruction quality and time per strategy");
  add_models(be, "Phase II checkpoint");
  be->add_option("--strategies", strategies, "Comma-separated list (default all)");
  be->add_option("--input", inputs, "P6 test images (default: held-out split)")->check(CLI::ExistingFile);
  be->add_option("--limit", limit, "Use at most this many test images (0 = all)");
  be->add_option("--out", out_path, "CSV path (default stdout)");

  CLI::App* st = sub("stats", "Per-layer mean |residual| over inversion results");
  st->add_option("--result", results, "Result archives")->required()->check(CLI::ExistingFile);
  st->add_option("--generator", generator, "Pretraining checkpoint")->required()->check(CLI::ExistingFile);
  st->add_option("--out", out_path, "CSV path (default stdout)");

  CLI::App* dm = sub("diffmap", "Difference map between x_hat and x_hat_w of a result");
  dm->add_option("--result", result, "Result archive")->required()->check(CLI::ExistingFile);
  dm->add_option("--out", out_path, "P5 heat map")->required();
  dm->add_option("--archive", archive_out, "Also write the raw map as an archive");
  dm->add_option("--scale", scale, "Map value rendered as white");

  CLI::App* di = sub("directions", "Principal latent directions of the generator");
  di->add_option("--generator", generator, "Pretraining checkpoint")->required()->check(CLI::ExistingFile);
  di->add_option("--k", k, "Number of directions");
  di->add_option("--n", n, "Number of sampled latents");
  di->add_option("--out", out_path, "Direction archive")->required();

  CLI::App* gc = sub("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--cases", cases, "Seeded cases per op and composite");

  CLI::App* dc = sub("dump-config", "Print every configuration value");

  if (!args.empty() && !args[0].starts_with("-") && !app.get_subcommand_no_throw(args[0])) {
    err << "error: unknown command '" << args[0] << "'\n\n" << app.help();
    return kExitUsage;
  }

  std::vector<std::string> argv_store{"hyperinv"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const std::string& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (dc->parsed()) {
      out << dump_config(resolve_config(common["dump-config"]));
      return kExitOk;
    }
    if (gc->parsed()) {
      const TrainConfig cfg = resolve_config(common["gradcheck"]);
      const auto rows = gradient_suite(cases, cfg.seed);
      std::size_t failed = 0;
      char buf[160];
      for (const GradSuiteRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%-22s case %zu  max_rel_err %.3e  coords %zu  skipped %zu  %s\n",
                      r.item.c_str(), r.case_index, r.report.max_relative_error,
                      r.report.coordinates, r.report.skipped, r.passed() ? "ok" : "FAIL");
        out << buf;
        failed += !r.passed();
      }
      out << rows.size() - failed << "/" << rows.size() << " checks within "
          << kGradCheckTolerance << "\n";
      return failed ? kExitRuntime : kExitOk;
    }
    if (pretrain->parsed()) {
      const TrainConfig cfg = resolve_config(common["pretrain"]);
      Pretrainer tr(cfg);
      if (!resume.empty()) tr.restore(archive_read(resume));
      run_trainer(tr, cfg, cfg.pretrain.iters, out_path, log_path, !resume.empty(), out);
      out << "generator hash " << hex(params_hash(tr.generator_params(), "g.")) << "\n";
      return kExitOk;
    }
    if (p1->parsed()) {
      const TrainConfig cfg = resolve_config(common["train-phase1"]);
      const Generator G = generator_from_checkpoint(archive_read(generator), cfg.toy);
      Phase1Trainer tr(cfg, G, make_dataset(cfg, G).train);
      if (!resume.empty()) tr.restore(archive_read(resume));
      run_trainer(tr, cfg, cfg.train.total_iters, out_path, log_path, !resume.empty(), out);
      return kExitOk;
    }
    if (p2->parsed()) {
      const TrainConfig cfg = resolve_config(common["train-phase2"]);
      const NamedTensors pre = archive_read(generator);
      const Generator G = generator_from_checkpoint(pre, cfg.toy);
      const NamedTensors p1ckpt = archive_read(phase1);
      require_generator(p1ckpt, G);
      NamedTensors e1, d;
      for (const auto& [name, v] : p1ckpt)
        if (name.starts_with("e1.")) e1.emplace(name, v);
      for (const auto& [name, v] : pre)
        if (name.starts_with("d.")) d.emplace(name, v);
      Phase2Trainer tr(cfg, G, e1, d, make_dataset(cfg, G).train);
      if (!resume.empty()) tr.restore(archive_read(resume));
      run_trainer(tr, cfg, cfg.train.total_iters, out_path, log_path, !resume.empty(), out);
      return kExitOk;
    }
    if (inv->parsed()) {
      const NamedTensors enc = archive_read(encoder);
      const Models m = models_from(resolve_config(common["invert"], enc), generator, enc);
      const Tensor x = read_images(inputs);
      const InversionResult r = invert(m, x);
      archive_write(out_path, result_to_archive(r));
      if (!archive_out.empty()) {
        std::filesystem::create_directories(archive_out);
        for (std::size_t i = 0; i < r.batch(); ++i) {
          const std::string stem = std::filesystem::path(inputs[i]).stem().string();
          image_write_ppm(std::filesystem::path(archive_out) / (stem + ".xhat.ppm"), unstack(r.xhat, i));
          image_write_ppm(std::filesystem::path(archive_out) / (stem + ".xw.ppm"), unstack(r.xw, i));
        }
      }
      print_metrics(out, "x_hat_w", metrics(m.proxy, x, r.xw, m.cfg.metrics));
      print_metrics(out, "x_hat", metrics(m.proxy, x, r.xhat, m.cfg.metrics));
      out << "seconds " << r.seconds.total << "  result hash " << hex(result_hash(r)) << "\n";
      return kExitOk;
    }
    if (ed->parsed()) {
      const NamedTensors enc = archive_read(encoder);
      const Models m = models_from(resolve_config(common["edit"], enc), generator, enc);
      const InversionResult r = result_from_archive(archive_read(result));
      if (row >= r.batch()) throw Error("edit: --row out of range");
      const DirectionSet dirs = read_directions(direction);
      if (index >= dirs.directions.size()) throw Error("edit: --index out of range");
      const Tensor img = edit(m, result_rows(r, row, 1), dirs.directions[index],
                              gamma.value_or(m.cfg.edit_gamma));
      image_write_ppm(out_path, unstack(img, 0));
      out << "image hash " << hex(content_hash(img)) << "\n";
      return kExitOk;
    }
    if (ip->parsed()) {
      const NamedTensors enc = archive_read(encoder);
      const Models m = models_from(resolve_config(common["interpolate"], enc), generator, enc);
      const InversionResult a = result_from_archive(archive_read(result));
      const InversionResult b = result_from_archive(archive_read(result_b));
      if (row >= a.batch() || row_b >= b.batch()) throw Error("interpolate: row out of range");
      const Tensor img = interpolate_dual(
          m, result_rows(a, row, 1), result_rows(b, row_b, 1), t,
          mode == "dual" ? InterpolationMode::Dual : InterpolationMode::LatentOnly);
      image_write_ppm(out_path, unstack(img, 0));
      out << "image hash " << hex(content_hash(img)) << "\n";
      return kExitOk;
    }
    if (be->parsed()) {
      const NamedTensors enc = archive_read(encoder);
      const Models m = models_from(resolve_config(common["bench"], enc), generator, enc);
      Tensor test = inputs.empty() ? make_dataset(m.cfg, m.G).test : read_images(inputs);
      if (limit && limit < test.dim(0)) test = batch_rows(test, 0, limit);
      std::vector<std::string> names = split_list(strategies);
      if (names.empty()) names.assign(std::begin(kBenchStrategies), std::end(kBenchStrategies));
      write_text(out_path, bench_csv(bench(m, test, names)), out);
      return kExitOk;
    }
    if (st->parsed()) {
      const TrainConfig cfg = resolve_config(common["stats"]);
      const Generator G = generator_from_checkpoint(archive_read(generator), cfg.toy);
      std::vector<std::vector<ResidualStatRow>> tables;
      for (const std::string& p : results) {
        const InversionResult r = result_from_archive(archive_read(p));
        if (r.generator_hash != G.hash())
          throw HashMismatch("stats: " + p + " belongs to another generator");
        for (std::size_t i = 0; i < r.batch(); ++i)
          tables.push_back(residual_stats(result_rows(r, i, 1).delta, G.layers()));
      }
      write_text(out_path, residual_stats_csv(average_residual_stats(tables)), out);
      return kExitOk;
    }
    if (dm->parsed()) {
      const InversionResult r = result_from_archive(archive_read(result));
      const Tensor map = difference_map(r.xhat, r.xw);
      heatmap_write_pgm(out_path, map, scale);
      if (!archive_out.empty()) archive_write(archive_out, {{"diffmap", map}});
      double mx = 0.0, mean = 0.0;
      for (double v : map.data()) {
        mx = std::max(mx, v);
        mean += v / static_cast<double>(map.size());
      }
      out << "mean " << mean << "  max " << mx << "\n";
      return kExitOk;
    }
    if (di->parsed()) {
      const TrainConfig cfg = resolve_config(common["directions"]);
      const Generator G = generator_from_checkpoint(archive_read(generator), cfg.toy);
      const DirectionSet set = find_directions(G, k, n, derive_seed(cfg.seed, "directions"));
      write_directions(out_path, set);
      for (std::size_t i = 0; i < set.eigenvalues.size(); ++i)
        out << set.directions[i].label << " eigenvalue " << set.eigenvalues[i] << "\n";
      return kExitOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace hyperinv
