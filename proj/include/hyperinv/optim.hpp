#pragma once

#include <cstdint>
#include <string>

#include "hyperinv/tensor.hpp"

namespace hyperinv {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. Moments are created lazily
/// (zero) the first time a parameter name is seen.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every parameter that has an entry in `grads`.
  void step(NamedTensors& params, const NamedTensors& grads);

  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return step_; }
  const NamedTensors& first_moments() const noexcept { return m_; }
  const NamedTensors& second_moments() const noexcept { return v_; }

  /// Serialises the state as "{prefix}m.{name}", "{prefix}v.{name}" and
  /// "{prefix}step" entries.
  void save_into(NamedTensors& out, const std::string& prefix) const;
  void load_from(const NamedTensors& in, const std::string& prefix);

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  NamedTensors m_;
  NamedTensors v_;
};

}  // namespace hyperinv
