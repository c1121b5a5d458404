#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hyperinv/config.hpp"
#include "hyperinv/generator.hpp"
#include "hyperinv/hypernet.hpp"
#include "hyperinv/losses.hpp"

namespace hyperinv {

/// Everything inference needs: the frozen generator plus trained encoders.
/// `e2` and `hyper` may be empty (phase I only); invert() then refuses.
struct Models {
  TrainConfig cfg;
  Generator G;
  NamedTensors e1, e2, hyper;
  ProxyFeatureNet proxy;

  Models(TrainConfig cfg, Generator G, NamedTensors e1, NamedTensors e2 = {},
         NamedTensors hyper = {});
  bool has_phase2() const noexcept { return !e2.empty() && !hyper.empty(); }
};

/// Builds models from a pretraining checkpoint (generator) and a phase I or
/// phase II checkpoint, checking that they were trained against the same
/// generator.
Models load_models(const TrainConfig& cfg, const NamedTensors& pretrain_ckpt,
                   const NamedTensors& encoder_ckpt);

struct InversionTiming {
  double content = 0, initial = 0, appearance = 0, residuals = 0, final = 0, total = 0;
};

/// Batched: row b of every field belongs to input image b.
struct InversionResult {
  ContentCode w;          // [B, d_w]
  ResidualWeights delta;  // per layer [B, ...kernel]
  Tensor xw;              // G(w, theta)
  Tensor xhat;            // G(w, theta + delta)
  InversionTiming seconds;
  std::uint64_t generator_hash = 0;

  std::size_t batch() const { return w.w.dim(0); }
};

/// Single forward pass: w = E1(x), x_w = G(w), h = E2(x) (fused with E2(x_w)
/// unless x-only), delta = H(h), x_hat = G(w, theta + delta).
InversionResult invert(const Models& m, const Tensor& images);
/// G(w, theta + delta) from stored codes.
Tensor regenerate(const Models& m, const ContentCode& w, const ResidualWeights& delta);
/// Hash of w, delta, x_w and x_hat.
std::uint64_t result_hash(const InversionResult& r);
/// Named tensors under "result.*"; round trips bit-exactly.
NamedTensors result_to_archive(const InversionResult& r);
InversionResult result_from_archive(const NamedTensors& archive);
/// Rows [first, first+count) of a batched result.
InversionResult result_rows(const InversionResult& r, std::size_t first, std::size_t count);

enum class DirectionSource { Pca, File };

struct Direction {
  Tensor d;  // [d_w], unit norm
  std::string label;
  DirectionSource source = DirectionSource::Pca;
};

/// w + gamma * d, broadcast over rows.
Tensor edit_latent(const Tensor& w, const Direction& d, double gamma);
/// G(w + gamma * d, theta + delta): edits keep the predicted residuals.
Tensor edit(const Models& m, const InversionResult& r, const Direction& d, double gamma);

enum class InterpolationMode { Dual, LatentOnly };

/// The interpolated inputs actually fed to the generator.
struct InterpolationTrace {
  Tensor w;
  std::vector<Tensor> delta;  // empty in latent-only mode
};

/// (1-t) * a + t * b, elementwise.
Tensor lerp(const Tensor& a, const Tensor& b, double t);
/// Dual: G(w_t, theta + delta_t); latent-only: G(w_t, theta). Both results
/// need the same batch size and generator.
Tensor interpolate_dual(const Models& m, const InversionResult& a, const InversionResult& b,
                        double t, InterpolationMode mode, InterpolationTrace* trace = nullptr);

struct ResidualStatRow {
  std::size_t layer = 0;
  LayerRole role = LayerRole::MainConv;
  std::size_t resolution = 0;
  double mean_abs = 0;
};
/// Mean |delta_j| per layer (over the whole batch).
std::vector<ResidualStatRow> residual_stats(const ResidualWeights& delta,
                                            std::span<const LayerSpec> table);
/// Row-wise average of several per-image tables.
std::vector<ResidualStatRow> average_residual_stats(
    std::span<const std::vector<ResidualStatRow>> tables);
std::string residual_stats_csv(std::span<const ResidualStatRow> rows);

/// Channel mean of |a - b| as an [R,R] map. For batches, the per-image
/// maps are averaged.
Tensor difference_map(const Tensor& xhat, const Tensor& xw);

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

struct MetricsRow {
  double l2 = 0, psnr = 0, ms_ssim = 0, lpips_proxy = 0, id_proxy = 0, seconds = 0;
};
/// PSNR from a [0,1]-range MSE; infinity at 0.
double psnr_from_l2(double l2);
/// Multi-scale SSIM of two [3,R,R] (or [1,3,R,R]) images in [-1,1],
/// evaluated on the [0,1] range.
double ms_ssim(const Tensor& x, const Tensor& y, const MetricsConfig& cfg);
/// Per-image metrics averaged over the batch.
MetricsRow metrics(const ProxyFeatureNet& proxy, const Tensor& x, const Tensor& xhat,
                   const MetricsConfig& cfg);
/// One row per image.
std::vector<MetricsRow> metrics_per_image(const ProxyFeatureNet& proxy, const Tensor& x,
                                          const Tensor& xhat, const MetricsConfig& cfg);

struct DirectionSet {
  std::vector<Direction> directions;
  std::vector<double> eigenvalues;  // nonincreasing
};
/// Top-k principal directions of `samples` [n, d].
DirectionSet pca_directions(const Tensor& samples, std::size_t k);
/// PCA of n mapped latents G.map(z), z ~ N(0, I) from `seed`.
DirectionSet find_directions(const Generator& G, std::size_t k, std::size_t n,
                             std::uint64_t seed);
void write_directions(const std::filesystem::path& path, const DirectionSet& set);
DirectionSet read_directions(const std::filesystem::path& path);

inline constexpr const char* kBenchStrategies[] = {"phase1-only", "full", "latent-optimization",
                                                    "per-image-finetune"};

struct BenchRow {
  std::string strategy;
  MetricsRow mean;  // mean.seconds is wall-clock seconds per image
};
/// Runs every strategy image by image on `test` [n,3,R,R].
std::vector<BenchRow> bench(const Models& m, const Tensor& test,
                            std::span<const std::string> strategies);
std::string bench_csv(std::span<const BenchRow> rows);

/// Latent-optimization baseline for one image: Adam on w from the average
/// latent, minimizing the reconstruction loss.
Tensor optimize_latent(const Models& m, const Tensor& image, std::size_t steps, double lr);
/// Per-image generator fine-tuning baseline: Adam on theta's kernels with
/// w = E1(x) fixed.
Tensor finetune_generator(const Models& m, const Tensor& image, std::size_t steps, double lr);

}  // namespace hyperinv
