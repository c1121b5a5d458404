#include "hyperinv/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "hyperinv/encoders.hpp"
#include "hyperinv/error.hpp"
#include "hyperinv/hypernet.hpp"

namespace hyperinv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kChunk = 32;
constexpr std::uint64_t kPretrainPool = 1u << 20;

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

NamedTensors with_prefix(const NamedTensors& all, std::string_view prefix) {
  NamedTensors out;
  for (auto it = all.lower_bound(std::string(prefix));
       it != all.end() && it->first.starts_with(prefix); ++it)
    out.insert(*it);
  return out;
}

void require_finite(double v, const char* what, std::size_t iteration) {
  if (!std::isfinite(v)) throw DivergenceError(std::string(what) + " is not finite",
                                               static_cast<long>(iteration));
}

void require_kind(const CheckpointMeta& m, CheckpointKind kind) {
  if (m.kind != kind)
    throw FormatError("checkpoint kind " + std::to_string(int(m.kind)) + ", expected " +
                      std::to_string(int(kind)));
}

std::vector<std::size_t> draw_rows(Rng& rng, std::size_t batch, std::size_t n) {
  std::vector<std::size_t> rows(batch);
  for (auto& r : rows) r = rng.below(n);
  return rows;
}

// Gradients for the parameters the optimizer owns; constants such as the
// layer table never enter the update.
NamedTensors trainable_gradients(Graph& g, Var loss, VarMap vars) {
  vars.erase("g.layer_spec");
  return gradients(g, loss, vars);
}

void check_images(const Tensor& images, const ToyDims& dims, const char* who) {
  const Shape expect{images.rank() ? images.dim(0) : 0, 3, dims.resolution, dims.resolution};
  if (images.shape() != expect) throw ShapeError(who, expect, images.shape());
  if (images.dim(0) == 0) throw Error(std::string(who) + ": empty training set");
}

}  // namespace

std::string log_csv_header() { return "iteration,l2,perc,id,adv,d_loss,r1"; }

std::string log_csv_row(const TrainLogRow& r) {
  return std::to_string(r.iteration) + "," + fmt(r.l2) + "," + fmt(r.perc) + "," + fmt(r.id) +
         "," + fmt(r.adv) + "," + fmt(r.d_loss) + "," + fmt(r.r1);
}

// ---------------------------------------------------------------------------

void put_meta(NamedTensors& ckpt, const CheckpointMeta& m) {
  ckpt["meta.kind"] = Tensor::scalar(static_cast<double>(m.kind));
  ckpt["meta.iteration"] = Tensor::scalar(static_cast<double>(m.iteration));
  ckpt["meta.generator_hash"] = Tensor::from(
      {static_cast<double>(m.generator_hash >> 32), static_cast<double>(m.generator_hash & 0xFFFFFFFFu)});
  Tensor rng({8});
  for (std::size_t i = 0; i < 4; ++i) {
    rng[2 * i] = static_cast<double>(m.rng[i] >> 32);
    rng[2 * i + 1] = static_cast<double>(m.rng[i] & 0xFFFFFFFFu);
  }
  ckpt["meta.rng"] = rng;
  Tensor cfg({m.config.size()});
  for (std::size_t i = 0; i < m.config.size(); ++i)
    cfg[i] = static_cast<unsigned char>(m.config[i]);
  ckpt["meta.config"] = cfg;
}

CheckpointMeta get_meta(const NamedTensors& ckpt) {
  auto at = [&](const char* name) -> const Tensor& {
    auto it = ckpt.find(name);
    if (it == ckpt.end()) throw FormatError(std::string("checkpoint is missing ") + name);
    return it->second;
  };
  auto u32 = [](double v) { return static_cast<std::uint64_t>(v); };
  CheckpointMeta m;
  m.kind = static_cast<CheckpointKind>(static_cast<int>(at("meta.kind").item()));
  m.iteration = static_cast<std::size_t>(at("meta.iteration").item());
  const Tensor& h = at("meta.generator_hash");
  if (h.size() != 2) throw FormatError("checkpoint: bad meta.generator_hash");
  m.generator_hash = (u32(h[0]) << 32) | u32(h[1]);
  const Tensor& r = at("meta.rng");
  if (r.size() != 8) throw FormatError("checkpoint: bad meta.rng");
  for (std::size_t i = 0; i < 4; ++i) m.rng[i] = (u32(r[2 * i]) << 32) | u32(r[2 * i + 1]);
  for (double c : at("meta.config").data()) m.config.push_back(static_cast<char>(c));
  return m;
}

Generator generator_from_checkpoint(const NamedTensors& ckpt, const ToyDims& dims) {
  Generator G(dims, with_prefix(ckpt, "g."));
  const CheckpointMeta m = get_meta(ckpt);
  if (m.generator_hash != G.hash())
    throw HashMismatch("frozen generator hash mismatch: recorded " + hex64(m.generator_hash) +
                       ", loaded weights hash to " + hex64(G.hash()));
  return G;
}

void require_generator(const NamedTensors& ckpt, const Generator& G) {
  const CheckpointMeta m = get_meta(ckpt);
  if (m.generator_hash != G.hash())
    throw HashMismatch("checkpoint was trained against generator " + hex64(m.generator_hash) +
                       ", not " + hex64(G.hash()));
}

Dataset make_dataset(const TrainConfig& cfg, const Generator& G) {
  const std::size_t R = cfg.toy.resolution;
  auto self_inversion = [&](const char* site, std::size_t n) {
    if (n == 0) return Tensor({0, 3, R, R});
    const ContentCode codes = G.sample_codes(derive_seed(cfg.data.seed, site), n);
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < n; i += kChunk) {
      const std::size_t c = std::min(kChunk, n - i);
      const Tensor imgs = G.generate(batch_rows(codes.w, i, c));
      for (std::size_t k = 0; k < c; ++k) parts.push_back(unstack(imgs, k));
    }
    return stack(parts);
  };
  Dataset d;
  if (cfg.data.mode == DataMode::SelfInversion) {
    d.train = self_inversion("data.train", cfg.data.train_size);
    d.test = self_inversion("data.test", cfg.data.test_size);
  } else {
    d.train = sample_dataset(derive_seed(cfg.data.seed, "data.train"), cfg.data.train_size, R);
    d.test = sample_dataset(derive_seed(cfg.data.seed, "data.test"), cfg.data.test_size, R);
  }
  return d;
}

// ---------------------------------------------------------------------------

Pretrainer::Pretrainer(TrainConfig cfg)
    : cfg_(std::move(cfg)),
      g_(Generator::init_params(cfg_.toy, cfg_.seed)),
      d_(init_discriminator(cfg_.toy, cfg_.seed)),
      opt_g_(AdamConfig{cfg_.pretrain.lr, 0.0, 0.99, 1e-8}),
      opt_d_(AdamConfig{cfg_.pretrain.lr, 0.0, 0.99, 1e-8}),
      rng_(derive_seed(cfg_.seed, "pretrain.stream")),
      table_(layer_table(cfg_.toy)) {
  cfg_.validate();
}

TrainLogRow Pretrainer::step() {
  const std::size_t B = cfg_.pretrain.batch_size, R = cfg_.toy.resolution;
  const std::uint64_t real_seed = derive_seed(cfg_.data.seed, "pretrain.real");
  std::vector<Tensor> reals;
  for (std::size_t b = 0; b < B; ++b)
    reals.push_back(procedural_image(real_seed, rng_.below(kPretrainPool), R));
  const Tensor real = stack(reals);
  const Tensor z_d = rng_.normal({B, cfg_.toy.w_dim});
  const Tensor z_g = rng_.normal({B, cfg_.toy.w_dim});

  TrainLogRow row{iteration_, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN};
  {
    Graph g;
    const VarMap gp = bind_params(g, g_, false, "g.");
    const Tensor fake = synthesize(gp, table_, map_latent(gp, g.constant(z_d))).value();
    const VarMap dp = bind_params(g, d_, true, "d.");
    const DLoss l = d_loss(dp, g.input(real), g.constant(fake), cfg_.loss.r1_gamma);
    row.d_loss = l.total.value().item();
    row.r1 = l.r1.valid() ? l.r1.value().item() : 0.0;
    require_finite(row.d_loss, "discriminator loss", iteration_);
    opt_d_.step(d_, gradients(g, l.total, dp));
  }
  {
    Graph g;
    const VarMap gp = bind_params(g, g_, true, "g.");
    const VarMap dp = bind_params(g, d_, false, "d.");
    Var fake = synthesize(gp, table_, map_latent(gp, g.constant(z_g)));
    Var loss = adv_loss_g(discriminate(dp, fake));
    row.adv = loss.value().item();
    require_finite(row.adv, "generator loss", iteration_);
    opt_g_.step(g_, trainable_gradients(g, loss, gp));
  }
  ++iteration_;
  return row;
}

void Pretrainer::run(const LogSink& log, const CheckpointSink& ckpt) {
  while (iteration_ < cfg_.pretrain.iters) {
    const TrainLogRow row = step();
    if (log) log(row);
    if (ckpt && cfg_.train.checkpoint_interval && iteration_ % cfg_.train.checkpoint_interval == 0)
      ckpt(iteration_);
  }
}

NamedTensors Pretrainer::checkpoint() const {
  NamedTensors out = g_;
  out.insert(d_.begin(), d_.end());
  opt_g_.save_into(out, "opt.g.");
  opt_d_.save_into(out, "opt.d.");
  put_meta(out, {CheckpointKind::Pretrain, iteration_, params_hash(g_, "g."), rng_.state(),
                 dump_config(cfg_)});
  return out;
}

void Pretrainer::restore(const NamedTensors& ckpt) {
  const CheckpointMeta m = get_meta(ckpt);
  require_kind(m, CheckpointKind::Pretrain);
  NamedTensors g = with_prefix(ckpt, "g.");
  Generator check(cfg_.toy, g);
  if (check.hash() != m.generator_hash) throw HashMismatch("pretrain checkpoint hash mismatch");
  g_ = std::move(g);
  d_ = with_prefix(ckpt, "d.");
  opt_g_.load_from(ckpt, "opt.g.");
  opt_d_.load_from(ckpt, "opt.d.");
  rng_.set_state(m.rng);
  iteration_ = m.iteration;
}

NamedTensors pretrain_gan(const TrainConfig& cfg, const LogSink& log) {
  Pretrainer p(cfg);
  p.run(log);
  return p.checkpoint();
}

double discriminator_gap(const TrainConfig& cfg, const NamedTensors& ckpt, std::size_t n) {
  const Generator G = generator_from_checkpoint(ckpt, cfg.toy);
  const NamedTensors d = with_prefix(ckpt, "d.");
  const Tensor real = sample_dataset(derive_seed(cfg.data.seed, "pretrain.heldout"), n,
                                     cfg.toy.resolution);
  const Tensor fake = G.generate(G.sample_codes(derive_seed(cfg.seed, "pretrain.heldout"), n));
  const Tensor lr = discriminate(d, real), lf = discriminate(d, fake);
  double gap = 0.0;
  for (std::size_t i = 0; i < n; ++i) gap += (lr[i] - lf[i]) / static_cast<double>(n);
  return gap;
}

// ---------------------------------------------------------------------------

Phase1Trainer::Phase1Trainer(TrainConfig cfg, Generator G, Tensor train_images)
    : cfg_(std::move(cfg)),
      G_(std::move(G)),
      train_(std::move(train_images)),
      proxy_(cfg_.loss.proxy_seed),
      e1_(init_content_encoder(cfg_.toy, derive_seed(cfg_.seed, "phase1.e1"))),
      opt_(AdamConfig{cfg_.train.lr}),
      rng_(derive_seed(cfg_.seed, "phase1.batches")) {
  cfg_.validate();
  check_images(train_, cfg_.toy, "train_phase1");
}

TrainLogRow Phase1Trainer::step() {
  const auto rows = draw_rows(rng_, cfg_.train.batch_size_warm, train_.dim(0));
  Graph g;
  Var x = g.constant(gather_rows(train_, rows));
  const VarMap ep = bind_params(g, e1_, true, "e1.");
  const VarMap gp = bind_params(g, G_.params(), false, "g.");
  Var xhat = synthesize(gp, G_.layers(), encode_content(ep, x));
  const RecLoss rec = rec_loss(proxy_, x, xhat, cfg_.loss);
  TrainLogRow row{iteration_, rec.l2.value().item(), rec.perc.value().item(),
                  rec.id.value().item(), kNaN, kNaN, kNaN};
  require_finite(rec.total.value().item(), "phase I loss", iteration_);
  opt_.step(e1_, gradients(g, rec.total, ep));
  ++iteration_;
  return row;
}

void Phase1Trainer::run(const LogSink& log, const CheckpointSink& ckpt) {
  while (iteration_ < cfg_.train.total_iters) {
    const TrainLogRow row = step();
    if (log) log(row);
    if (ckpt && cfg_.train.checkpoint_interval && iteration_ % cfg_.train.checkpoint_interval == 0)
      ckpt(iteration_);
  }
}

NamedTensors Phase1Trainer::checkpoint() const {
  NamedTensors out = e1_;
  opt_.save_into(out, "opt.e1.");
  put_meta(out, {CheckpointKind::Phase1, iteration_, G_.hash(), rng_.state(), dump_config(cfg_)});
  return out;
}

void Phase1Trainer::restore(const NamedTensors& ckpt) {
  const CheckpointMeta m = get_meta(ckpt);
  require_kind(m, CheckpointKind::Phase1);
  require_generator(ckpt, G_);
  NamedTensors e1 = with_prefix(ckpt, "e1.");
  for (const auto& [name, t] : e1_) {
    auto it = e1.find(name);
    if (it == e1.end() || it->second.shape() != t.shape())
      throw FormatError("phase I checkpoint does not match the encoder layout at " + name);
  }
  e1_ = std::move(e1);
  opt_.load_from(ckpt, "opt.e1.");
  rng_.set_state(m.rng);
  iteration_ = m.iteration;
}

// ---------------------------------------------------------------------------

struct Phase2Trainer::Forward {
  VarMap enc;
  Var x, xw, xhat;
  RecLoss rec;
  Var fake_logits;
};

Phase2Trainer::Phase2Trainer(TrainConfig cfg, Generator G, NamedTensors e1, NamedTensors d_init,
                             Tensor train_images)
    : cfg_(std::move(cfg)),
      G_(std::move(G)),
      e1_(with_prefix(e1, "e1.")),
      train_(std::move(train_images)),
      proxy_(cfg_.loss.proxy_seed),
      d_(with_prefix(d_init, "d.")),
      opt_enc_(AdamConfig{cfg_.train.lr}),
      opt_disc_(AdamConfig{cfg_.train.lr}),
      rng_(derive_seed(cfg_.seed, "phase2.batches")) {
  cfg_.validate();
  check_images(train_, cfg_.toy, "train_phase2");
  if (e1_.empty()) throw Error("train_phase2: missing phase I encoder");
  if (d_.empty()) throw Error("train_phase2: missing pretrained discriminator");
  const NamedTensors e2 = init_appearance_encoder(cfg_.toy, cfg_.hyper,
                                                  derive_seed(cfg_.seed, "phase2.e2"));
  const NamedTensors h = init_hypernet(cfg_.toy, cfg_.hyper, derive_seed(cfg_.seed, "phase2.hyper"));
  enc_ = e2;
  enc_.insert(h.begin(), h.end());

  // E1 and theta are frozen, so w = E1(x) and x_hat_w = G(w) are fixed per
  // training image and computed once.
  std::vector<Tensor> ws, xws;
  const std::size_t n = train_.dim(0);
  for (std::size_t i = 0; i < n; i += kChunk) {
    const std::size_t c = std::min(kChunk, n - i);
    const ContentCode w = encode_content(e1_, batch_rows(train_, i, c), G_.hash());
    const Tensor xw = G_.generate(w);
    for (std::size_t k = 0; k < c; ++k) {
      ws.push_back(unstack(w.w, k));
      xws.push_back(unstack(xw, k));
    }
  }
  w_cache_ = stack(ws);
  xw_cache_ = stack(xws);
}

Phase2Trainer::Forward Phase2Trainer::forward(Graph& g, std::span<const std::size_t> rows,
                                              bool adversarial) const {
  Forward f;
  f.x = g.constant(gather_rows(train_, rows));
  f.xw = g.constant(gather_rows(xw_cache_, rows));
  Var w = g.constant(gather_rows(w_cache_, rows));
  f.enc = bind_params(g, enc_, true);
  const VarMap gp = bind_params(g, G_.params(), false, "g.");
  Var h = encode_appearance(f.enc, f.x);
  if (cfg_.hyper.appearance == AppearanceMode::Fused) h = fuse(h, encode_appearance(f.enc, f.xw));
  const std::vector<Var> deltas = predict_residuals(f.enc, G_.layers(), cfg_.hyper.hidden_dim, h);
  std::vector<Var> kernels;
  for (std::size_t j = 0; j < deltas.size(); ++j)
    kernels.push_back(param_at(gp, layer_weight_name(j + 1)) + deltas[j]);
  f.xhat = synthesize(gp, G_.layers(), w, kernels);
  f.rec = rec_loss(proxy_, f.x, f.xhat, cfg_.loss);
  if (adversarial) {
    const VarMap dp = bind_params(g, d_, false, "d.");
    f.fake_logits = discriminate(dp, f.xhat);
  }
  return f;
}

Phase2Trainer::Preview Phase2Trainer::preview(std::span<const std::size_t> rows) const {
  Graph g;
  const Forward f = forward(g, rows, false);
  return {f.x.value(), f.xw.value(), f.xhat.value()};
}

TrainLogRow Phase2Trainer::step() {
  const bool adversarial = iteration_ >= cfg_.train.warmup_iters;
  const std::size_t B = adversarial ? cfg_.train.batch_size_adv : cfg_.train.batch_size_warm;
  const auto rows = draw_rows(rng_, B, train_.dim(0));
  TrainLogRow row{iteration_, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN};

  Tensor real, fake;
  {
    Graph g;
    const Forward f = forward(g, rows, adversarial);
    Var loss = f.rec.total;
    if (adversarial) {
      loss = enc_loss(f.rec, f.fake_logits, cfg_.loss);
      row.adv = adv_loss_g(f.fake_logits).value().item();
    }
    row.l2 = f.rec.l2.value().item();
    row.perc = f.rec.perc.value().item();
    row.id = f.rec.id.value().item();
    require_finite(loss.value().item(), "phase II encoder loss", iteration_);
    if (adversarial) {
      real = f.x.value();
      fake = f.xhat.value();
    }
    opt_enc_.step(enc_, gradients(g, loss, f.enc));
  }
  if (adversarial) {
    Graph g;
    const VarMap dp = bind_params(g, d_, true, "d.");
    const DLoss l = d_loss(dp, g.input(real), g.constant(fake), cfg_.loss.r1_gamma);
    row.d_loss = l.total.value().item();
    row.r1 = l.r1.valid() ? l.r1.value().item() : 0.0;
    require_finite(row.d_loss, "discriminator loss", iteration_);
    opt_disc_.step(d_, gradients(g, l.total, dp));
  }
  ++iteration_;
  return row;
}

void Phase2Trainer::run(const LogSink& log, const CheckpointSink& ckpt) {
  while (iteration_ < cfg_.train.total_iters) {
    const TrainLogRow row = step();
    if (log) log(row);
    if (ckpt && cfg_.train.checkpoint_interval && iteration_ % cfg_.train.checkpoint_interval == 0)
      ckpt(iteration_);
  }
}

NamedTensors Phase2Trainer::appearance_encoder() const { return with_prefix(enc_, "e2."); }
NamedTensors Phase2Trainer::hypernet() const { return with_prefix(enc_, "hyper."); }

NamedTensors Phase2Trainer::checkpoint() const {
  NamedTensors out = enc_;
  out.insert(d_.begin(), d_.end());
  out.insert(e1_.begin(), e1_.end());
  opt_enc_.save_into(out, "opt.enc.");
  opt_disc_.save_into(out, "opt.disc.");
  put_meta(out, {CheckpointKind::Phase2, iteration_, G_.hash(), rng_.state(), dump_config(cfg_)});
  return out;
}

void Phase2Trainer::restore(const NamedTensors& ckpt) {
  const CheckpointMeta m = get_meta(ckpt);
  require_kind(m, CheckpointKind::Phase2);
  require_generator(ckpt, G_);
  const NamedTensors e1 = with_prefix(ckpt, "e1.");
  if (params_hash(e1) != params_hash(e1_))
    throw HashMismatch("phase II checkpoint was trained with a different phase I encoder");
  NamedTensors enc = with_prefix(ckpt, "e2.");
  const NamedTensors h = with_prefix(ckpt, "hyper.");
  enc.insert(h.begin(), h.end());
  for (const auto& [name, t] : enc_) {
    auto it = enc.find(name);
    if (it == enc.end() || it->second.shape() != t.shape())
      throw FormatError("phase II checkpoint does not match the configured layout at " + name);
  }
  enc_ = std::move(enc);
  d_ = with_prefix(ckpt, "d.");
  opt_enc_.load_from(ckpt, "opt.enc.");
  opt_disc_.load_from(ckpt, "opt.disc.");
  rng_.set_state(m.rng);
  iteration_ = m.iteration;
}

}  // namespace hyperinv
