#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hyperinv {

/// Toy network dimensions. The generator has one main conv and one torgb
/// conv per resolution block from 4x4 up to `resolution`.
struct ToyDims {
  std::size_t resolution = 32;
  std::size_t w_dim = 64;
  std::size_t channel_base = 32;
  std::size_t appearance_channels = 32;
  std::size_t appearance_size = 4;
  friend bool operator==(const ToyDims&, const ToyDims&) = default;
};

enum class AppearanceMode { Fused, XOnly };
enum class CodeSharing { PerLayer, Shared };

struct HyperConfig {
  std::size_t hidden_dim = 64;    // D
  std::size_t feature_dim = 64;   // F
  AppearanceMode appearance = AppearanceMode::Fused;
  CodeSharing code = CodeSharing::PerLayer;
  friend bool operator==(const HyperConfig&, const HyperConfig&) = default;
};

struct LossConfig {
  double lambda_pixel = 1.0;
  double lambda_perc = 0.8;
  double lambda_id = 0.1;
  double lambda_adv = 0.005;
  double r1_gamma = 10.0;
  std::uint64_t proxy_seed = 1234;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

enum class DataMode { SelfInversion, Procedural };

struct DataConfig {
  DataMode mode = DataMode::SelfInversion;
  std::uint64_t seed = 0;
  std::size_t train_size = 256;
  std::size_t test_size = 64;
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ScheduleConfig {
  double lr = 1e-4;
  std::size_t batch_size_warm = 8;
  std::size_t batch_size_adv = 4;
  std::size_t warmup_iters = 2000;
  std::size_t total_iters = 20000;
  std::size_t log_interval = 500;
  std::size_t checkpoint_interval = 0;
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

struct PretrainConfig {
  std::size_t iters = 2000;
  std::size_t batch_size = 8;
  double lr = 5e-4;
  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

struct BenchConfig {
  std::size_t latent_steps = 300;
  double latent_lr = 0.01;
  std::size_t finetune_steps = 100;
  double finetune_lr = 1e-3;
  friend bool operator==(const BenchConfig&, const BenchConfig&) = default;
};

struct MetricsConfig {
  std::size_t ms_ssim_scales = 3;
  double ssim_k1 = 0.01;
  double ssim_k2 = 0.03;
  friend bool operator==(const MetricsConfig&, const MetricsConfig&) = default;
};

enum class Profile { FacesAnalog, ChurchAnalog };

/// Every tunable value of the pipeline. Text form is line-oriented
/// `key = value`; see dump_config() for the full key list.
struct TrainConfig {
  Profile profile = Profile::FacesAnalog;
  std::uint64_t seed = 0;
  ToyDims toy;
  HyperConfig hyper;
  LossConfig loss;
  ScheduleConfig train;
  PretrainConfig pretrain;
  DataConfig data;
  BenchConfig bench;
  MetricsConfig metrics;
  double edit_gamma = 1.0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Loss weights of the two hyperparameter profiles.
void apply_profile(TrainConfig& cfg, Profile profile);

std::string dump_config(const TrainConfig& cfg);
/// Parses config text over the defaults. A `profile` line is applied before
/// any other key regardless of position. Unknown or repeated keys, and
/// malformed lines, throw Error with the line number.
TrainConfig parse_config(std::string_view text);
/// Applies a single `key=value` override.
void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value);
std::vector<std::string> config_keys();

std::string_view profile_name(Profile p);

}  // namespace hyperinv
