#pragma once

#include <cstdint>

#include "hyperinv/config.hpp"
#include "hyperinv/generator.hpp"

namespace hyperinv {

/// E1: strided conv pyramid, global mean pool, linear head to d_w.
/// Parameters "e1.*"; the head starts at zero so w = 0 before training.
NamedTensors init_content_encoder(const ToyDims& dims, std::uint64_t seed);
Var encode_content(const VarMap& ep, Var images);
ContentCode encode_content(const NamedTensors& e1, const Tensor& images,
                           std::uint64_t generator_hash);

/// Number of appearance heads: L for per-layer codes, 1 for a shared code.
std::size_t appearance_layers(const ToyDims& dims, const HyperConfig& hyper);

/// E2: shared strided trunk down to s x s, then one 1x1 conv head per style
/// layer. Parameters "e2.*". Output [B, L, C_a, s, s].
NamedTensors init_appearance_encoder(const ToyDims& dims, const HyperConfig& hyper,
                                     std::uint64_t seed);
Var encode_appearance(const VarMap& ep, Var images);
Tensor encode_appearance(const NamedTensors& e2, const Tensor& images);

/// Channel concatenation, features of x first. Accepts [L,C,s,s] halves or
/// batched [B,L,C,s,s] halves.
Var fuse(Var h_x, Var h_xw);
Tensor fuse(const Tensor& h_x, const Tensor& h_xw);

}  // namespace hyperinv
