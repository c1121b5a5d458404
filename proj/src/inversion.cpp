#include "hyperinv/inversion.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "hyperinv/encoders.hpp"
#include "hyperinv/error.hpp"
#include "hyperinv/io.hpp"
#include "hyperinv/optim.hpp"
#include "hyperinv/training.hpp"

namespace hyperinv {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

NamedTensors with_prefix(const NamedTensors& all, std::string_view prefix) {
  NamedTensors out;
  for (auto it = all.lower_bound(std::string(prefix));
       it != all.end() && it->first.starts_with(prefix); ++it)
    out.insert(*it);
  return out;
}

void require_same_generator(std::uint64_t have, std::uint64_t want, const char* who) {
  if (have != want)
    throw HashMismatch(std::string(who) + ": result belongs to generator " + hex64(have) +
                       ", models use " + hex64(want));
}

// [3,R,R] -> [1,3,R,R]; batches pass through.
Tensor as_batch(const Tensor& images, const char* who) {
  if (images.rank() == 3) {
    Shape s{1};
    s.insert(s.end(), images.shape().begin(), images.shape().end());
    return images.reshaped(s);
  }
  if (images.rank() != 4) throw ShapeError(who, Shape{0, 3, 0, 0}, images.shape());
  return images;
}

void check_images(const Models& m, const Tensor& images, const char* who) {
  const std::size_t R = m.cfg.toy.resolution;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != R || images.dim(3) != R)
    throw ShapeError(who, Shape{0, 3, R, R}, images.shape());
}

}  // namespace

Models::Models(TrainConfig c, Generator g, NamedTensors enc1, NamedTensors enc2, NamedTensors h)
    : cfg(std::move(c)),
      G(std::move(g)),
      e1(with_prefix(enc1, "e1.")),
      e2(with_prefix(enc2, "e2.")),
      hyper(with_prefix(h, "hyper.")),
      proxy(cfg.loss.proxy_seed) {
  if (G.dims() != cfg.toy) throw Error("models: generator dimensions differ from the config");
  if (e1.empty()) throw Error("models: missing phase I encoder");
}

Models load_models(const TrainConfig& cfg, const NamedTensors& pretrain_ckpt,
                   const NamedTensors& encoder_ckpt) {
  Generator G = generator_from_checkpoint(pretrain_ckpt, cfg.toy);
  require_generator(encoder_ckpt, G);
  return Models(cfg, std::move(G), encoder_ckpt, encoder_ckpt, encoder_ckpt);
}

InversionResult invert(const Models& m, const Tensor& input) {
  if (!m.has_phase2()) throw Error("invert: models have no phase II encoder / hypernetworks");
  const Tensor x = as_batch(input, "invert");
  check_images(m, x, "invert");
  InversionResult r;
  const auto t0 = Clock::now();
  auto t = t0;
  r.w = encode_content(m.e1, x, m.G.hash());
  r.seconds.content = since(t);
  t = Clock::now();
  r.xw = m.G.generate(r.w.w);
  r.seconds.initial = since(t);
  t = Clock::now();
  Tensor h = encode_appearance(m.e2, x);
  if (m.cfg.hyper.appearance == AppearanceMode::Fused) h = fuse(h, encode_appearance(m.e2, r.xw));
  r.seconds.appearance = since(t);
  t = Clock::now();
  r.delta = predict_residuals(m.hyper, m.G.layers(), m.cfg.hyper.hidden_dim, h, m.G.hash());
  r.seconds.residuals = since(t);
  t = Clock::now();
  r.xhat = m.G.generate(r.w.w, r.delta.layers);
  r.seconds.final = since(t);
  r.seconds.total = since(t0);
  r.generator_hash = m.G.hash();
  return r;
}

Tensor regenerate(const Models& m, const ContentCode& w, const ResidualWeights& delta) {
  require_same_generator(w.generator_hash, m.G.hash(), "regenerate");
  require_same_generator(delta.generator_hash, m.G.hash(), "regenerate");
  return m.G.generate(w.w, delta.layers);
}

std::uint64_t result_hash(const InversionResult& r) {
  std::uint64_t h = r.generator_hash;
  auto mix = [&](const Tensor& t) { h = content_hash(t, h); };
  mix(r.w.w);
  for (const Tensor& d : r.delta.layers) mix(d);
  mix(r.xw);
  mix(r.xhat);
  return h;
}

namespace {

Tensor pack_u64(std::uint64_t v) {
  return Tensor::from({static_cast<double>(v >> 32), static_cast<double>(v & 0xFFFFFFFFu)});
}

std::uint64_t unpack_u64(const Tensor& t) {
  if (t.size() != 2) throw FormatError("result archive: bad generator hash");
  return (static_cast<std::uint64_t>(t[0]) << 32) | static_cast<std::uint64_t>(t[1]);
}

std::string delta_name(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "result.delta.%02zu", j);
  return buf;
}

}  // namespace

NamedTensors result_to_archive(const InversionResult& r) {
  NamedTensors out;
  out["result.generator_hash"] = pack_u64(r.generator_hash);
  out["result.w"] = r.w.w;
  for (std::size_t j = 0; j < r.delta.layers.size(); ++j) out[delta_name(j + 1)] = r.delta.layers[j];
  out["result.xw"] = r.xw;
  out["result.xhat"] = r.xhat;
  const InversionTiming& t = r.seconds;
  out["result.seconds"] =
      Tensor::from({t.content, t.initial, t.appearance, t.residuals, t.final, t.total});
  return out;
}

InversionResult result_from_archive(const NamedTensors& a) {
  auto at = [&](const std::string& name) -> const Tensor& {
    auto it = a.find(name);
    if (it == a.end()) throw FormatError("result archive is missing " + name);
    return it->second;
  };
  InversionResult r;
  r.generator_hash = unpack_u64(at("result.generator_hash"));
  r.w = {at("result.w"), r.generator_hash};
  r.delta.generator_hash = r.generator_hash;
  for (std::size_t j = 1; a.contains(delta_name(j)); ++j) r.delta.layers.push_back(a.at(delta_name(j)));
  r.xw = at("result.xw");
  r.xhat = at("result.xhat");
  const Tensor& t = at("result.seconds");
  if (t.size() != 6) throw FormatError("result archive: bad timing record");
  r.seconds = {t[0], t[1], t[2], t[3], t[4], t[5]};
  return r;
}

InversionResult result_rows(const InversionResult& r, std::size_t first, std::size_t count) {
  InversionResult out;
  out.w = {batch_rows(r.w.w, first, count), r.w.generator_hash};
  out.delta.generator_hash = r.delta.generator_hash;
  for (const Tensor& d : r.delta.layers) out.delta.layers.push_back(batch_rows(d, first, count));
  out.xw = batch_rows(r.xw, first, count);
  out.xhat = batch_rows(r.xhat, first, count);
  out.seconds = r.seconds;
  out.generator_hash = r.generator_hash;
  return out;
}

// ---------------------------------------------------------------------------

Tensor edit_latent(const Tensor& w, const Direction& d, double gamma) {
  if (w.rank() != 2 || d.d.rank() != 1 || d.d.dim(0) != w.dim(1))
    throw ShapeError("edit", w.shape(), d.d.shape());
  Tensor out = w;
  const std::size_t n = w.dim(1);
  for (std::size_t b = 0; b < w.dim(0); ++b)
    for (std::size_t i = 0; i < n; ++i) out[b * n + i] = w[b * n + i] + gamma * d.d[i];
  return out;
}

Tensor edit(const Models& m, const InversionResult& r, const Direction& d, double gamma) {
  require_same_generator(r.generator_hash, m.G.hash(), "edit");
  return m.G.generate(edit_latent(r.w.w, d, gamma), r.delta.layers);
}

Tensor lerp(const Tensor& a, const Tensor& b, double t) {
  if (a.shape() != b.shape()) throw ShapeError("lerp", a.shape(), b.shape());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - t) * a[i] + t * b[i];
  return out;
}

Tensor interpolate_dual(const Models& m, const InversionResult& a, const InversionResult& b,
                        double t, InterpolationMode mode, InterpolationTrace* trace) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error("interpolate: t must lie in [0, 1]");
  require_same_generator(a.generator_hash, m.G.hash(), "interpolate");
  require_same_generator(b.generator_hash, m.G.hash(), "interpolate");
  InterpolationTrace local;
  InterpolationTrace& tr = trace ? *trace : local;
  tr.w = lerp(a.w.w, b.w.w, t);
  tr.delta.clear();
  if (mode == InterpolationMode::LatentOnly) return m.G.generate(tr.w);
  if (a.delta.layers.size() != b.delta.layers.size())
    throw ShapeError("interpolate", Shape{a.delta.layers.size()}, Shape{b.delta.layers.size()});
  for (std::size_t j = 0; j < a.delta.layers.size(); ++j)
    tr.delta.push_back(lerp(a.delta.layers[j], b.delta.layers[j], t));
  return m.G.generate(tr.w, tr.delta);
}

// ---------------------------------------------------------------------------

std::vector<ResidualStatRow> residual_stats(const ResidualWeights& delta,
                                            std::span<const LayerSpec> table) {
  if (delta.layers.size() != table.size())
    throw ShapeError("residual_stats", Shape{table.size()}, Shape{delta.layers.size()});
  std::vector<ResidualStatRow> rows;
  for (std::size_t j = 0; j < table.size(); ++j) {
    const Tensor& d = delta.layers[j];
    double s = 0.0;
    for (double v : d.data()) s += std::abs(v);
    rows.push_back({table[j].index, table[j].role, table[j].resolution,
                    d.size() ? s / static_cast<double>(d.size()) : 0.0});
  }
  return rows;
}

std::vector<ResidualStatRow> average_residual_stats(
    std::span<const std::vector<ResidualStatRow>> tables) {
  if (tables.empty()) return {};
  std::vector<ResidualStatRow> out = tables[0];
  for (auto& r : out) r.mean_abs = 0.0;
  for (const auto& t : tables) {
    if (t.size() != out.size()) throw Error("residual_stats: tables differ in length");
    for (std::size_t j = 0; j < t.size(); ++j) out[j].mean_abs += t[j].mean_abs;
  }
  for (auto& r : out) r.mean_abs /= static_cast<double>(tables.size());
  return out;
}

std::string residual_stats_csv(std::span<const ResidualStatRow> rows) {
  std::ostringstream os;
  os << "layer,role,resolution,mean_abs\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g", r.mean_abs);
    os << r.layer << ',' << role_name(r.role) << ',' << r.resolution << ',' << buf << '\n';
  }
  return os.str();
}

Tensor difference_map(const Tensor& xhat_in, const Tensor& xw_in) {
  const Tensor a = as_batch(xhat_in, "difference_map");
  const Tensor b = as_batch(xw_in, "difference_map");
  if (a.shape() != b.shape()) throw ShapeError("difference_map", a.shape(), b.shape());
  const std::size_t B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3), P = H * W;
  Tensor mean_abs({C, H, W});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < C * P; ++i) mean_abs[i] += std::abs(a[n * C * P + i] - b[n * C * P + i]);
  for (double& v : mean_abs.data()) v /= static_cast<double>(B);
  Tensor map({H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < P; ++p) map[p] += mean_abs[c * P + p];
  for (double& v : map.data()) v /= static_cast<double>(C);
  return map;
}

// ---------------------------------------------------------------------------

double psnr_from_l2(double l2) {
  if (l2 == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(1.0 / l2);
}

namespace {

constexpr double kMsSsimWeights[] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

// Separable Gaussian (sigma 1.5) of width min(7, size), normalized.
std::vector<double> gaussian_window(std::size_t size) {
  const std::size_t n = std::min<std::size_t>(7, size);
  std::vector<double> g(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - (static_cast<double>(n) - 1.0) / 2.0;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

// "Valid" separable filtering of one H x W plane.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t H, std::size_t W,
                                 const std::vector<double>& g, std::size_t& ho, std::size_t& wo) {
  const std::size_t n = g.size();
  ho = H - n + 1;
  wo = W - n + 1;
  std::vector<double> rows(H * wo, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += g[k] * img[y * W + x + k];
      rows[y * wo + x] = s;
    }
  std::vector<double> out(ho * wo, 0.0);
  for (std::size_t y = 0; y < ho; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += g[k] * rows[(y + k) * wo + x];
      out[y * wo + x] = s;
    }
  return out;
}

struct SsimTerms {
  double ssim = 0;  // mean of l * cs
  double cs = 0;    // mean of cs
};

SsimTerms ssim_plane(const std::vector<double>& a, const std::vector<double>& b, std::size_t H,
                     std::size_t W, const MetricsConfig& cfg) {
  const double c1 = cfg.ssim_k1 * cfg.ssim_k1, c2 = cfg.ssim_k2 * cfg.ssim_k2;
  const auto g = gaussian_window(std::min(H, W));
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  std::size_t ho, wo;
  const auto mu_a = filter_valid(a, H, W, g, ho, wo);
  const auto mu_b = filter_valid(b, H, W, g, ho, wo);
  const auto e_aa = filter_valid(aa, H, W, g, ho, wo);
  const auto e_bb = filter_valid(bb, H, W, g, ho, wo);
  const auto e_ab = filter_valid(ab, H, W, g, ho, wo);
  SsimTerms t;
  for (std::size_t i = 0; i < ho * wo; ++i) {
    const double mab = mu_a[i] * mu_b[i];
    const double maa = mu_a[i] * mu_a[i], mbb = mu_b[i] * mu_b[i];
    const double va = e_aa[i] - maa, vb = e_bb[i] - mbb, cov = e_ab[i] - mab;
    const double l = (2.0 * mab + c1) / (maa + mbb + c1);
    const double cs = (2.0 * cov + c2) / (va + vb + c2);
    t.ssim += l * cs;
    t.cs += cs;
  }
  t.ssim /= static_cast<double>(ho * wo);
  t.cs /= static_cast<double>(ho * wo);
  return t;
}

std::vector<double> pool2(const std::vector<double>& img, std::size_t H, std::size_t W) {
  std::vector<double> out((H / 2) * (W / 2));
  for (std::size_t y = 0; y < H / 2; ++y)
    for (std::size_t x = 0; x < W / 2; ++x)
      out[y * (W / 2) + x] = (img[2 * y * W + 2 * x] + img[2 * y * W + 2 * x + 1] +
                              img[(2 * y + 1) * W + 2 * x] + img[(2 * y + 1) * W + 2 * x + 1]) /
                             4.0;
  return out;
}

}  // namespace

double ms_ssim(const Tensor& x_in, const Tensor& y_in, const MetricsConfig& cfg) {
  const Tensor x = as_batch(x_in, "ms_ssim"), y = as_batch(y_in, "ms_ssim");
  if (x.shape() != y.shape() || x.dim(0) != 1) throw ShapeError("ms_ssim", x.shape(), y.shape());
  const std::size_t M = cfg.ms_ssim_scales;
  if (M == 0 || M > 5) throw Error("ms_ssim: scales must be 1..5");
  const std::size_t C = x.dim(1);
  std::size_t H = x.dim(2), W = x.dim(3);
  if ((std::min(H, W) >> (M - 1)) < 2) throw Error("ms_ssim: image too small for the scales");
  double wsum = 0.0;
  for (std::size_t j = 0; j < M; ++j) wsum += kMsSsimWeights[j];

  std::vector<std::vector<double>> pa(C), pb(C);
  for (std::size_t c = 0; c < C; ++c) {
    pa[c].resize(H * W);
    pb[c].resize(H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
      pa[c][i] = (x[c * H * W + i] + 1.0) / 2.0;
      pb[c][i] = (y[c * H * W + i] + 1.0) / 2.0;
    }
  }
  double result = 1.0;
  for (std::size_t j = 0; j < M; ++j) {
    SsimTerms mean;
    for (std::size_t c = 0; c < C; ++c) {
      const SsimTerms t = ssim_plane(pa[c], pb[c], H, W, cfg);
      mean.ssim += t.ssim / static_cast<double>(C);
      mean.cs += t.cs / static_cast<double>(C);
    }
    const double term = j + 1 == M ? mean.ssim : mean.cs;
    result *= std::pow(std::max(term, 0.0), kMsSsimWeights[j] / wsum);
    if (j + 1 < M) {
      for (std::size_t c = 0; c < C; ++c) {
        pa[c] = pool2(pa[c], H, W);
        pb[c] = pool2(pb[c], H, W);
      }
      H /= 2;
      W /= 2;
    }
  }
  return result;
}

std::vector<MetricsRow> metrics_per_image(const ProxyFeatureNet& proxy, const Tensor& x_in,
                                          const Tensor& xhat_in, const MetricsConfig& cfg) {
  const Tensor x = as_batch(x_in, "metrics"), xhat = as_batch(xhat_in, "metrics");
  if (x.shape() != xhat.shape()) throw ShapeError("metrics", x.shape(), xhat.shape());
  LossConfig perc_only;
  perc_only.lambda_pixel = 0.0;
  perc_only.lambda_perc = 1.0;
  perc_only.lambda_id = 0.0;
  std::vector<MetricsRow> rows;
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    const Tensor xb = batch_rows(x, b, 1), yb = batch_rows(xhat, b, 1);
    MetricsRow r;
    double s = 0.0;
    for (std::size_t i = 0; i < xb.size(); ++i) {
      const double d = (xb[i] - yb[i]) / 2.0;
      s += d * d;
    }
    r.l2 = s / static_cast<double>(xb.size());
    r.psnr = psnr_from_l2(r.l2);
    r.ms_ssim = ms_ssim(xb, yb, cfg);
    Graph g;
    r.lpips_proxy = rec_loss(proxy, g.constant(xb), g.constant(yb), perc_only).perc.value().item();
    r.id_proxy = id_similarity(proxy, xb, yb)[0];
    rows.push_back(r);
  }
  return rows;
}

MetricsRow metrics(const ProxyFeatureNet& proxy, const Tensor& x, const Tensor& xhat,
                   const MetricsConfig& cfg) {
  const auto rows = metrics_per_image(proxy, x, xhat, cfg);
  MetricsRow m;
  if (rows.empty()) return m;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    m.l2 += r.l2 / n;
    m.ms_ssim += r.ms_ssim / n;
    m.lpips_proxy += r.lpips_proxy / n;
    m.id_proxy += r.id_proxy / n;
    m.seconds += r.seconds / n;
  }
  m.psnr = psnr_from_l2(m.l2);
  return m;
}

// ---------------------------------------------------------------------------

DirectionSet pca_directions(const Tensor& samples, std::size_t k) {
  if (samples.rank() != 2) throw ShapeError("find_directions", Shape{0, 0}, samples.shape());
  const std::size_t n = samples.dim(0), d = samples.dim(1);
  if (k > d) throw Error("find_directions: k = " + std::to_string(k) + " exceeds d_w = " +
                         std::to_string(d));
  if (n < 2) throw Error("find_directions: need at least two samples");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat X = Eigen::Map<const Mat>(samples.ptr(), static_cast<Eigen::Index>(n),
                                static_cast<Eigen::Index>(d));
  X.rowwise() -= X.colwise().mean();
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw Error("find_directions: eigen decomposition failed");
  DirectionSet out;
  // Eigenvalues come back ascending.
  for (std::size_t i = 0; i < k; ++i) {
    const auto col = static_cast<Eigen::Index>(d - 1 - i);
    Eigen::VectorXd v = es.eigenvectors().col(col);
    v.normalize();
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      if (v[j] != 0.0) {
        if (v[j] < 0.0) v = -v;
        break;
      }
    }
    Tensor t({d});
    for (std::size_t j = 0; j < d; ++j) t[j] = v[static_cast<Eigen::Index>(j)];
    out.directions.push_back({t, "pc" + std::to_string(i), DirectionSource::Pca});
    out.eigenvalues.push_back(es.eigenvalues()[col]);
  }
  return out;
}

DirectionSet find_directions(const Generator& G, std::size_t k, std::size_t n,
                             std::uint64_t seed) {
  if (k > G.dims().w_dim)
    throw Error("find_directions: k = " + std::to_string(k) + " exceeds d_w = " +
                std::to_string(G.dims().w_dim));
  return pca_directions(G.sample_codes(seed, n).w, k);
}

void write_directions(const std::filesystem::path& path, const DirectionSet& set) {
  NamedTensors t;
  for (std::size_t i = 0; i < set.directions.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "direction.%04zu", i);
    t[name] = set.directions[i].d;
  }
  t["eigenvalues"] = Tensor({set.eigenvalues.size()}, set.eigenvalues);
  archive_write(path, t);
}

DirectionSet read_directions(const std::filesystem::path& path) {
  const NamedTensors t = archive_read(path);
  DirectionSet set;
  for (const auto& [name, d] : with_prefix(t, "direction.")) {
    if (d.rank() != 1) throw FormatError("directions: " + name + " is not a vector");
    double s = 0.0;
    for (double v : d.data()) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > 1e-6) throw FormatError("directions: " + name + " is not unit norm");
    set.directions.push_back({d, name.substr(10), DirectionSource::File});
  }
  if (auto it = t.find("eigenvalues"); it != t.end())
    set.eigenvalues.assign(it->second.data().begin(), it->second.data().end());
  return set;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kMeanLatentSamples = 1000;

Tensor mean_latent(const Generator& G, std::uint64_t seed) {
  const Tensor w = G.sample_codes(derive_seed(seed, "bench.mean_latent"), kMeanLatentSamples).w;
  const std::size_t d = w.dim(1);
  Tensor mean({1, d});
  for (std::size_t i = 0; i < w.dim(0); ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += w[i * d + j];
  for (double& v : mean.data()) v /= static_cast<double>(w.dim(0));
  return mean;
}

Tensor optimize_latent_from(const Models& m, const Tensor& x, Tensor w, std::size_t steps,
                            double lr) {
  Adam opt(AdamConfig{lr});
  NamedTensors p{{"w", std::move(w)}};
  for (std::size_t s = 0; s < steps; ++s) {
    Graph g;
    const VarMap vars{{"w", g.param(p.at("w"))}};
    const VarMap gp = bind_params(g, m.G.params(), false, "g.");
    Var xhat = synthesize(gp, m.G.layers(), vars.at("w"));
    const RecLoss rec = rec_loss(m.proxy, g.constant(x), xhat, m.cfg.loss);
    opt.step(p, gradients(g, rec.total, vars));
  }
  return m.G.generate(p.at("w"));
}

}  // namespace

Tensor optimize_latent(const Models& m, const Tensor& image, std::size_t steps, double lr) {
  const Tensor x = as_batch(image, "optimize_latent");
  check_images(m, x, "optimize_latent");
  if (x.dim(0) != 1) throw ShapeError("optimize_latent", Shape{1, 3, 0, 0}, x.shape());
  return optimize_latent_from(m, x, mean_latent(m.G, m.cfg.seed), steps, lr);
}

Tensor finetune_generator(const Models& m, const Tensor& image, std::size_t steps, double lr) {
  const Tensor x = as_batch(image, "finetune_generator");
  check_images(m, x, "finetune_generator");
  const Tensor w = encode_content(m.e1, x, m.G.hash()).w;
  NamedTensors kernels;
  for (const auto& l : m.G.layers()) kernels[layer_weight_name(l.index)] = m.G.kernel(l.index);
  Adam opt(AdamConfig{lr});
  for (std::size_t s = 0; s < steps; ++s) {
    Graph g;
    const VarMap gp = bind_params(g, m.G.params(), false, "g.");
    const VarMap kv = bind_params(g, kernels, true);
    std::vector<Var> ordered;
    for (const auto& l : m.G.layers()) ordered.push_back(kv.at(layer_weight_name(l.index)));
    Var xhat = synthesize(gp, m.G.layers(), g.constant(w), ordered);
    const RecLoss rec = rec_loss(m.proxy, g.constant(x), xhat, m.cfg.loss);
    opt.step(kernels, gradients(g, rec.total, kv));
  }
  std::vector<Tensor> deltas;
  for (const auto& l : m.G.layers()) {
    Tensor d = kernels.at(layer_weight_name(l.index));
    const Tensor& base = m.G.kernel(l.index);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= base[i];
    deltas.push_back(std::move(d));
  }
  Graph g;
  const VarMap gp = bind_params(g, m.G.params(), false, "g.");
  std::vector<Var> ks;
  for (const auto& l : m.G.layers()) ks.push_back(g.constant(kernels.at(layer_weight_name(l.index))));
  return synthesize(gp, m.G.layers(), g.constant(w), ks).value();
}

std::vector<BenchRow> bench(const Models& m, const Tensor& test,
                            std::span<const std::string> strategies) {
  for (const auto& s : strategies)
    if (std::find(std::begin(kBenchStrategies), std::end(kBenchStrategies), s) ==
        std::end(kBenchStrategies))
      throw Error("bench: unknown strategy '" + s + "'");
  std::vector<BenchRow> out;
  const std::size_t n = test.rank() == 4 ? test.dim(0) : 0;
  if (n == 0) return out;
  check_images(m, test, "bench");
  std::optional<Tensor> w_mean;
  for (const auto& s : strategies) {
    std::vector<Tensor> recon;
    double seconds = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor x = batch_rows(test, i, 1);
      const auto t0 = Clock::now();
      Tensor y;
      if (s == "phase1-only") {
        y = m.G.generate(encode_content(m.e1, x, m.G.hash()));
      } else if (s == "full") {
        y = invert(m, x).xhat;
      } else if (s == "latent-optimization") {
        if (!w_mean) w_mean = mean_latent(m.G, m.cfg.seed);
        y = optimize_latent_from(m, x, *w_mean, m.cfg.bench.latent_steps, m.cfg.bench.latent_lr);
      } else {
        y = finetune_generator(m, x, m.cfg.bench.finetune_steps, m.cfg.bench.finetune_lr);
      }
      seconds += since(t0);
      recon.push_back(unstack(y, 0));
    }
    BenchRow row{s, metrics(m.proxy, test, stack(recon), m.cfg.metrics)};
    row.mean.seconds = seconds / static_cast<double>(n);
    out.push_back(row);
  }
  return out;
}

std::string bench_csv(std::span<const BenchRow> rows) {
  std::ostringstream os;
  os << "strategy,l2,lpips_proxy,id_proxy,psnr,ms_ssim,seconds\n";
  auto num = [](double v) -> std::string {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  };
  for (const auto& r : rows)
    os << r.strategy << ',' << num(r.mean.l2) << ',' << num(r.mean.lpips_proxy) << ','
       << num(r.mean.id_proxy) << ',' << num(r.mean.psnr) << ',' << num(r.mean.ms_ssim) << ','
       << num(r.mean.seconds) << '\n';
  return os.str();
}

}  // namespace hyperinv
