#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "hyperinv/encoders.hpp"
#include "hyperinv/error.hpp"
#include "hyperinv/hypernet.hpp"
#include "hyperinv/io.hpp"
#include "hyperinv/training.hpp"

using namespace hyperinv;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.toy.resolution = 16;
  cfg.toy.w_dim = 8;
  cfg.toy.channel_base = 8;
  cfg.toy.appearance_channels = 4;
  cfg.hyper.hidden_dim = 4;
  cfg.hyper.feature_dim = 8;
  cfg.data.train_size = 8;
  cfg.data.test_size = 4;
  cfg.train.batch_size_warm = 2;
  cfg.train.batch_size_adv = 2;
  cfg.train.warmup_iters = 4;
  cfg.train.total_iters = 8;
  cfg.pretrain.iters = 3;
  cfg.pretrain.batch_size = 2;
  return cfg;
}

struct Fixture {
  TrainConfig cfg = small_config();
  NamedTensors pre = pretrain_gan(cfg);
  Generator G = generator_from_checkpoint(pre, cfg.toy);
  Dataset data = make_dataset(cfg, G);
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

std::string bytes_of(const NamedTensors& ckpt) { return archive_encode(ckpt); }

NamedTensors through_disk(const NamedTensors& ckpt) { return archive_decode(archive_encode(ckpt)); }

NamedTensors trained_e1(std::size_t iters) {
  Fixture& f = fixture();
  TrainConfig cfg = f.cfg;
  cfg.train.total_iters = iters;
  cfg.train.warmup_iters = 0;
  Phase1Trainer p1(cfg, f.G, f.data.train);
  p1.run();
  return p1.encoder();
}

}  // namespace

TEST(TrainLog, CsvFormatting) {
  EXPECT_EQ(log_csv_header(), "iteration,l2,perc,id,adv,d_loss,r1");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(log_csv_row({3, 0.5, 0.25, 0.0, nan, nan, nan}), "3,0.5,0.25,0,,,");
}

TEST(Checkpoint, MetaRoundTrip) {
  CheckpointMeta m;
  m.kind = CheckpointKind::Phase2;
  m.iteration = 12345;
  m.generator_hash = 0xFEDCBA9876543210ull;
  m.rng = {~0ull, 1, 0x8000000000000000ull, 42};
  m.config = "seed = 3\nname = x\n";
  NamedTensors t;
  put_meta(t, m);
  const CheckpointMeta back = get_meta(through_disk(t));
  EXPECT_EQ(back.kind, m.kind);
  EXPECT_EQ(back.iteration, m.iteration);
  EXPECT_EQ(back.generator_hash, m.generator_hash);
  EXPECT_EQ(back.rng, m.rng);
  EXPECT_EQ(back.config, m.config);
}

TEST(Pretrain, ZeroIterationsIsInitialization) {
  TrainConfig cfg = small_config();
  cfg.pretrain.iters = 0;
  const NamedTensors ck = pretrain_gan(cfg);
  const Generator G = generator_from_checkpoint(ck, cfg.toy);
  EXPECT_EQ(G.hash(), Generator::initialize(cfg.toy, cfg.seed).hash());
}

TEST(Pretrain, ResumeMatchesUninterruptedRun) {
  TrainConfig cfg = small_config();
  cfg.pretrain.iters = 4;
  Pretrainer full(cfg);
  full.run();
  Pretrainer first(cfg);
  for (int i = 0; i < 2; ++i) first.step();
  Pretrainer second(cfg);
  second.restore(through_disk(first.checkpoint()));
  second.run();
  EXPECT_EQ(bytes_of(second.checkpoint()), bytes_of(full.checkpoint()));
}

TEST(Pretrain, TamperedGeneratorIsRejected) {
  NamedTensors ck = fixture().pre;
  ck.at(layer_weight_name(1))[0] += 1e-12;
  EXPECT_THROW(generator_from_checkpoint(ck, fixture().cfg.toy), HashMismatch);
}

TEST(Dataset, SelfInversionTargetsComeFromTheGenerator) {
  Fixture& f = fixture();
  EXPECT_EQ(f.data.train.shape(), (Shape{8, 3, 16, 16}));
  EXPECT_EQ(f.data.test.shape(), (Shape{4, 3, 16, 16}));
  EXPECT_TRUE(bit_equal(make_dataset(f.cfg, f.G).train, f.data.train));
  const ContentCode w = f.G.sample_codes(derive_seed(f.cfg.data.seed, "data.train"), 8);
  EXPECT_TRUE(bit_equal(f.G.generate(w), f.data.train));
}

TEST(Phase1, ZeroIterationsIsInitialization) {
  Fixture& f = fixture();
  TrainConfig cfg = f.cfg;
  cfg.train.total_iters = 0;
  cfg.train.warmup_iters = 0;
  Phase1Trainer p1(cfg, f.G, f.data.train);
  p1.run();
  const NamedTensors init = init_content_encoder(cfg.toy, derive_seed(cfg.seed, "phase1.e1"));
  EXPECT_EQ(params_hash(p1.encoder()), params_hash(init));
}

TEST(Phase1, TwoHundredIterationsAreDeterministic) {
  Fixture& f = fixture();
  TrainConfig cfg = f.cfg;
  cfg.train.total_iters = 200;
  cfg.train.warmup_iters = 0;
  Phase1Trainer a(cfg, f.G, f.data.train), b(cfg, f.G, f.data.train);
  a.run();
  b.run();
  EXPECT_EQ(bytes_of(a.checkpoint()), bytes_of(b.checkpoint()));
  EXPECT_NE(params_hash(a.encoder()), params_hash(trained_e1(0)));
}

TEST(Phase1, ResumeMatchesUninterruptedRun) {
  Fixture& f = fixture();
  TrainConfig cfg = f.cfg;
  cfg.train.total_iters = 10;
  Phase1Trainer full(cfg, f.G, f.data.train);
  full.run();
  Phase1Trainer first(cfg, f.G, f.data.train);
  for (int i = 0; i < 5; ++i) first.step();
  Phase1Trainer second(cfg, f.G, f.data.train);
  second.restore(through_disk(first.checkpoint()));
  EXPECT_EQ(second.iteration(), 5u);
  second.run();
  EXPECT_EQ(bytes_of(second.checkpoint()), bytes_of(full.checkpoint()));
}

TEST(Phase1, CheckpointHoldsOnlyContentEncoderState) {
  Fixture& f = fixture();
  Phase1Trainer p1(f.cfg, f.G, f.data.train);
  p1.step();
  for (const auto& [name, t] : p1.checkpoint())
    EXPECT_TRUE(name.starts_with("e1.") || name.starts_with("opt.e1.") ||
                name.starts_with("meta."))
        << name;
}

TEST(Phase1, ForeignGeneratorCheckpointIsRejected) {
  Fixture& f = fixture();
  Phase1Trainer p1(f.cfg, f.G, f.data.train);
  const Generator other = Generator::initialize(f.cfg.toy, 99);
  Phase1Trainer p2(f.cfg, other, f.data.train);
  EXPECT_THROW(p2.restore(p1.checkpoint()), HashMismatch);
}

TEST(Phase1, NonFiniteLossAbortsWithIteration) {
  Fixture& f = fixture();
  Tensor bad = f.data.train;
  bad.data()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg = f.cfg;
  cfg.data.train_size = 1;
  Phase1Trainer p1(cfg, f.G, batch_rows(bad, 0, 1));
  try {
    p1.step();
    FAIL() << "no error";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 0);
  }
}

TEST(Phase2, ZeroInitResidualReproducesPhaseOne) {
  Fixture& f = fixture();
  Phase2Trainer p2(f.cfg, f.G, trained_e1(3), f.pre, f.data.train);
  const std::vector<std::size_t> rows = {0, 3, 7};
  const auto pv = p2.preview(rows);
  EXPECT_TRUE(bit_equal(pv.xhat, pv.xw));
  EXPECT_TRUE(bit_equal(pv.x, gather_rows(f.data.train, rows)));
}

TEST(Phase2, DiscriminatorFrozenThroughWarmup) {
  Fixture& f = fixture();
  TrainConfig cfg = f.cfg;
  cfg.train.warmup_iters = cfg.train.total_iters;
  Phase2Trainer p2(cfg, f.G, trained_e1(2), f.pre, f.data.train);
  std::vector<TrainLogRow> rows;
  p2.run([&](const TrainLogRow& r) { rows.push_back(r); });
  ASSERT_EQ(rows.size(), cfg.train.total_iters);
  for (const auto& r : rows) {
    EXPECT_TRUE(std::isnan(r.d_loss));
    EXPECT_TRUE(std::isnan(r.adv));
  }
  EXPECT_EQ(params_hash(p2.discriminator()), params_hash(f.pre, "d."));
  EXPECT_NE(params_hash(p2.hypernet()), params_hash(init_hypernet(cfg.toy, cfg.hyper,
                                                                  derive_seed(cfg.seed, "phase2.hyper"))));
}

TEST(Phase2, DiscriminatorStepsStartAfterWarmup) {
  Fixture& f = fixture();
  Phase2Trainer p2(f.cfg, f.G, trained_e1(2), f.pre, f.data.train);
  std::vector<TrainLogRow> rows;
  p2.run([&](const TrainLogRow& r) { rows.push_back(r); });
  for (const auto& r : rows) {
    const bool adv = r.iteration >= f.cfg.train.warmup_iters;
    EXPECT_EQ(std::isfinite(r.d_loss), adv) << r.iteration;
    EXPECT_EQ(std::isfinite(r.adv), adv) << r.iteration;
    EXPECT_TRUE(std::isfinite(r.l2));
  }
  EXPECT_NE(params_hash(p2.discriminator()), params_hash(f.pre, "d."));
}

TEST(Phase2, FrozenPartsAreNeverUpdated) {
  Fixture& f = fixture();
  const NamedTensors e1 = trained_e1(2);
  Phase2Trainer p2(f.cfg, f.G, e1, f.pre, f.data.train);
  p2.run();
  EXPECT_EQ(params_hash(p2.content_encoder()), params_hash(e1));
  EXPECT_EQ(params_hash(p2.generator().params()), params_hash(f.G.params()));
  EXPECT_EQ(p2.generator().hash(), f.G.hash());
}

TEST(Phase2, ResumeAcrossWarmupBoundaryMatches) {
  Fixture& f = fixture();
  const NamedTensors e1 = trained_e1(2);
  Phase2Trainer full(f.cfg, f.G, e1, f.pre, f.data.train);
  full.run();
  for (std::size_t k : {std::size_t{2}, std::size_t{6}}) {
    Phase2Trainer first(f.cfg, f.G, e1, f.pre, f.data.train);
    for (std::size_t i = 0; i < k; ++i) first.step();
    Phase2Trainer second(f.cfg, f.G, e1, f.pre, f.data.train);
    second.restore(through_disk(first.checkpoint()));
    second.run();
    EXPECT_EQ(bytes_of(second.checkpoint()), bytes_of(full.checkpoint())) << k;
  }
}

TEST(Phase2, MismatchedPhaseOneEncoderIsRejected) {
  Fixture& f = fixture();
  Phase2Trainer a(f.cfg, f.G, trained_e1(1), f.pre, f.data.train);
  Phase2Trainer b(f.cfg, f.G, trained_e1(2), f.pre, f.data.train);
  EXPECT_THROW(b.restore(a.checkpoint()), HashMismatch);
}

TEST(Phase2, MissingPhaseOneEncoderIsAnError) {
  Fixture& f = fixture();
  EXPECT_THROW(Phase2Trainer(f.cfg, f.G, NamedTensors{}, f.pre, f.data.train), Error);
}
