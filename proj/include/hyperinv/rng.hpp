#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "hyperinv/tensor.hpp"

namespace hyperinv {

/// xoshiro256** seeded through splitmix64. All sampling in the library goes
/// through this type so runs are reproducible across platforms and languages;
/// normals use the cosine branch of Box-Muller on 53-bit uniforms, so the
/// four state words are the complete generator state.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  Tensor normal(Shape shape, double stddev = 1.0);
  Tensor uniform(Shape shape, double lo, double hi);

  const State& state() const noexcept { return s_; }
  void set_state(const State& s);

 private:
  State s_{};
};

std::uint64_t splitmix64(std::uint64_t& x);

/// Derives an independent stream seed from a base seed and a site label.
std::uint64_t derive_seed(std::uint64_t base, std::string_view site);

}  // namespace hyperinv
