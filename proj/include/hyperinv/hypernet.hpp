#pragma once

#include <cstdint>
#include <vector>

#include "hyperinv/config.hpp"
#include "hyperinv/generator.hpp"

namespace hyperinv {

/// Per-layer residual kernels, index j-1 for layer j. Each tensor is either
/// the kernel shape (one image) or [B, ...kernel shape] (a batch).
struct ResidualWeights {
  std::vector<Tensor> layers;
  std::uint64_t generator_hash = 0;
};

/// Channels of the hypernetwork input slice: 2*C_a when fused, C_a x-only.
std::size_t hyper_input_channels(const ToyDims& dims, const HyperConfig& hyper);

/// H_j for every layer: "hyper.{j}.ft.{0,1}" (3x3 stride-2 convs, leaky
/// relu after each, s x s down to 1 x 1), "hyper.{j}.A" [F, c_out*D] and
/// "hyper.{j}.B" [D, c_in*k*k]. B starts at zero so every residual is zero
/// at initialisation.
NamedTensors init_hypernet(const ToyDims& dims, const HyperConfig& hyper, std::uint64_t seed);

/// h_slice [B, C_h, s, s] -> residual [B, c_out, c_in, k, k].
Var hyper_layer_forward(const VarMap& hp, const LayerSpec& layer, std::size_t hidden_dim,
                        Var h_slice);

/// h [B, L, C_h, s, s] (L = 1 for a shared code) -> one residual per layer.
std::vector<Var> predict_residuals(const VarMap& hp, std::span<const LayerSpec> table,
                                   std::size_t hidden_dim, Var h);
ResidualWeights predict_residuals(const NamedTensors& hyper, std::span<const LayerSpec> table,
                                  std::size_t hidden_dim, const Tensor& h,
                                  std::uint64_t generator_hash);

/// theta_j + delta_j on the convolution kernels; everything else untouched.
Generator refine_generator(const Generator& base, const ResidualWeights& delta);

struct MapperParamCount {
  std::size_t factorized = 0;  // F*c_out*D + D*c_in*k^2
  std::size_t naive = 0;       // F*c_out*c_in*k^2
};
MapperParamCount mapper_param_count(const LayerSpec& layer, std::size_t feature_dim,
                                    std::size_t hidden_dim);
/// Weights and biases of the two feature-transformer convs.
std::size_t feature_transformer_param_count(std::size_t in_channels, std::size_t feature_dim);

}  // namespace hyperinv
