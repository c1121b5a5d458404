#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hyperinv/config.hpp"
#include "hyperinv/nn.hpp"

namespace hyperinv {

enum class LayerRole { MainConv, ToRgb };

std::string_view role_name(LayerRole role);

/// One convolution of the synthesis network. Indices are 1-based.
struct LayerSpec {
  std::size_t index = 0;
  LayerRole role = LayerRole::MainConv;
  std::size_t resolution = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t style_index = 0;

  Shape kernel_shape() const { return {out_channels, in_channels, kernel, kernel}; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Feature channels of the synthesis blocks at a given resolution.
std::size_t block_channels(const ToyDims& dims, std::size_t resolution);

/// One main 3x3 conv followed by one 1x1 torgb conv per block, 4x4 up to the
/// output resolution; style index i(j) = j.
std::vector<LayerSpec> layer_table(const ToyDims& dims);

/// Layer table as an [N,7] tensor (stored in checkpoints as "g.layer_spec").
Tensor encode_layer_table(std::span<const LayerSpec> table);
std::vector<LayerSpec> decode_layer_table(const Tensor& t);

inline std::string layer_weight_name(std::size_t j) {
  return "g.layer." + std::to_string(j) + ".weight";
}

/// A latent code (one row per image) tagged with the generator it belongs to.
struct ContentCode {
  Tensor w;  // [B, d_w]
  std::uint64_t generator_hash = 0;
};

/// Graph-level building blocks shared by training and inference.
/// `gp` holds the "g.*" parameters.
Var map_latent(const VarMap& gp, Var z);
/// Synthesis from w [B,d_w]. `kernels`, when non-empty, replaces the N
/// convolution kernels; each may be shared [Cout,Cin,k,k] or per-sample
/// [B,Cout,Cin,k,k].
Var synthesize(const VarMap& gp, std::span<const LayerSpec> table, Var w,
               std::span<const Var> kernels = {});

/// Style-based toy generator G(w, theta) with frozen-weight bookkeeping.
class Generator {
 public:
  /// Validates names and shapes against the layer table for `dims`.
  Generator(ToyDims dims, NamedTensors params);

  static Generator initialize(const ToyDims& dims, std::uint64_t seed);
  static NamedTensors init_params(const ToyDims& dims, std::uint64_t seed);

  const ToyDims& dims() const noexcept { return dims_; }
  const NamedTensors& params() const noexcept { return params_; }
  const std::vector<LayerSpec>& layers() const noexcept { return table_; }
  std::size_t num_layers() const noexcept { return table_.size(); }
  const Tensor& kernel(std::size_t j) const;

  /// Identity of the frozen checkpoint. A refined generator keeps the hash
  /// of the weights it was refined from.
  std::uint64_t hash() const noexcept { return hash_; }
  bool refined() const noexcept { return refined_; }

  /// z [B,d_w] -> w [B,d_w].
  Tensor map(const Tensor& z) const;
  ContentCode sample_codes(std::uint64_t seed, std::size_t n) const;

  Tensor generate(const Tensor& w) const;
  /// Checks that the code belongs to this generator.
  Tensor generate(const ContentCode& code) const;
  /// Generates with theta_j + residuals[j-1]; each residual is shared or
  /// per-sample ([B, ...kernel shape]).
  Tensor generate(const Tensor& w, std::span<const Tensor> residuals) const;

  /// Element-wise theta + delta on the N convolution kernels only.
  Generator refine(std::span<const Tensor> deltas) const;

 private:
  ToyDims dims_;
  NamedTensors params_;
  std::vector<LayerSpec> table_;
  std::uint64_t hash_ = 0;
  bool refined_ = false;
};

/// Discriminator: strided conv stack, spatial mean pool, linear head.
/// Parameters live under "d.*". Returns logits of shape [B].
Var discriminate(const VarMap& dp, Var images);
Tensor discriminate(const NamedTensors& d, const Tensor& images);
NamedTensors init_discriminator(const ToyDims& dims, std::uint64_t seed);

/// Procedural shapes on a gradient background, values in [-1,1].
Tensor procedural_image(std::uint64_t seed, std::uint64_t index, std::size_t resolution);
/// n images [n,3,R,R], image i = procedural_image(seed, i, R).
Tensor sample_dataset(std::uint64_t seed, std::size_t n, std::size_t resolution);

/// Rows [first, first+count) of a batch tensor.
Tensor batch_rows(const Tensor& batch, std::size_t first, std::size_t count);
/// Rows picked by index.
Tensor gather_rows(const Tensor& batch, std::span<const std::size_t> rows);

}  // namespace hyperinv
