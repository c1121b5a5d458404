#pragma once

#include <map>
#include <string>
#include <string_view>

#include "hyperinv/graph.hpp"
#include "hyperinv/rng.hpp"

namespace hyperinv {

/// Graph leaves for a parameter set, keyed like the NamedTensors they mirror.
using VarMap = std::map<std::string, Var>;

/// Creates one leaf per tensor whose name starts with `prefix`.
VarMap bind_params(Graph& g, const NamedTensors& params, bool trainable,
                   std::string_view prefix = {});

/// Gradient values of `loss` with respect to every leaf in `vars`.
NamedTensors gradients(Graph& g, Var loss, const VarMap& vars);

const Var& param_at(const VarMap& p, const std::string& name);

/// conv2d with a per-output-channel bias: "{name}.weight", "{name}.bias".
Var conv_layer(const VarMap& p, const std::string& name, Var x, int stride, int pad);
/// x [B,in] * "{name}.weight" [in,out] + "{name}.bias" [out].
Var linear(const VarMap& p, const std::string& name, Var x);

/// He-style normal init (std = gain / sqrt(fan_in)) and zero bias.
void init_conv(NamedTensors& params, const std::string& name, std::size_t cout, std::size_t cin,
               std::size_t k, Rng& rng, double gain = 1.0);
void init_linear(NamedTensors& params, const std::string& name, std::size_t in, std::size_t out,
                 Rng& rng, double gain = 1.0);

/// Count of scalar parameters whose name starts with `prefix`.
std::size_t parameter_count(const NamedTensors& params, std::string_view prefix = {});

/// Hash of the tensors whose name starts with `prefix` (names included).
std::uint64_t params_hash(const NamedTensors& params, std::string_view prefix = {});

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
/// Item `i` of the leading axis.
Tensor unstack(const Tensor& batch, std::size_t i);

inline constexpr double kLeakyGain = 1.3867504905630728;  // sqrt(2 / (1 + 0.2^2))

}  // namespace hyperinv
