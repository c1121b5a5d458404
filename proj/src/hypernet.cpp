#include "hyperinv/hypernet.hpp"

#include <cmath>

#include "hyperinv/encoders.hpp"
#include "hyperinv/error.hpp"

namespace hyperinv {

namespace {

constexpr std::size_t kTransformerWidth = 64;

std::string hyper_name(std::size_t j) { return "hyper." + std::to_string(j); }

}  // namespace

std::size_t hyper_input_channels(const ToyDims& dims, const HyperConfig& hyper) {
  return hyper.appearance == AppearanceMode::Fused ? 2 * dims.appearance_channels
                                                  : dims.appearance_channels;
}

NamedTensors init_hypernet(const ToyDims& dims, const HyperConfig& hyper, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "hyper.init"));
  const std::size_t in = hyper_input_channels(dims, hyper);
  const std::size_t F = hyper.feature_dim, D = hyper.hidden_dim;
  NamedTensors p;
  for (const LayerSpec& l : layer_table(dims)) {
    const std::string n = hyper_name(l.index);
    init_conv(p, n + ".ft.0", kTransformerWidth, in, 3, rng, kLeakyGain);
    init_conv(p, n + ".ft.1", F, kTransformerWidth, 3, rng, kLeakyGain);
    p[n + ".A"] = rng.normal({F, l.out_channels * D}, 1.0 / std::sqrt(double(F)));
    p[n + ".B"] = Tensor({D, l.in_channels * l.kernel * l.kernel});
  }
  return p;
}

Var hyper_layer_forward(const VarMap& hp, const LayerSpec& l, std::size_t D, Var h_slice) {
  const std::string n = hyper_name(l.index);
  if (h_slice.shape().size() != 4) throw ShapeError("hyper_layer_forward", Shape{0, 0, 0, 0},
                                                    h_slice.shape());
  const std::size_t batch = h_slice.shape()[0];
  Var f = leaky_relu(conv_layer(hp, n + ".ft.0", h_slice, 2, 1));
  f = leaky_relu(conv_layer(hp, n + ".ft.1", f, 2, 1));
  const Var& A = param_at(hp, n + ".A");
  const Var& B = param_at(hp, n + ".B");
  const std::size_t F = A.shape()[0];
  if (numel(f.shape()) != batch * F)
    throw ShapeError("hyper_layer_forward", Shape{batch, F, 1, 1}, f.shape());
  if (A.shape()[1] != l.out_channels * D || B.shape() != Shape{D, l.in_channels * l.kernel * l.kernel})
    throw ShapeError("hyper_layer_forward", Shape{D, l.in_channels * l.kernel * l.kernel}, B.shape());
  Var e = reshape(matmul(reshape(f, Shape{batch, F}), A), Shape{batch * l.out_channels, D});
  Var k = matmul(e, B);
  return reshape(k, Shape{batch, l.out_channels, l.in_channels, l.kernel, l.kernel});
}

std::vector<Var> predict_residuals(const VarMap& hp, std::span<const LayerSpec> table,
                                   std::size_t D, Var h) {
  const Shape& hs = h.shape();
  if (hs.size() != 5) throw ShapeError("predict_residuals", Shape{0, table.size(), 0, 0, 0}, hs);
  const bool shared = hs[1] == 1;
  if (!shared && hs[1] != table.size())
    throw ShapeError("predict_residuals", Shape{hs[0], table.size(), hs[2], hs[3], hs[4]}, hs);
  std::vector<Var> out;
  out.reserve(table.size());
  for (const LayerSpec& l : table) {
    const std::size_t i = shared ? 0 : l.style_index - 1;
    Var slice_i = reshape(slice(h, 1, i, 1), Shape{hs[0], hs[2], hs[3], hs[4]});
    out.push_back(hyper_layer_forward(hp, l, D, slice_i));
  }
  return out;
}

ResidualWeights predict_residuals(const NamedTensors& hyper, std::span<const LayerSpec> table,
                                  std::size_t D, const Tensor& h, std::uint64_t generator_hash) {
  Graph g;
  const VarMap hp = bind_params(g, hyper, false, "hyper.");
  ResidualWeights r{{}, generator_hash};
  for (const Var& v : predict_residuals(hp, table, D, g.constant(h))) r.layers.push_back(v.value());
  return r;
}

Generator refine_generator(const Generator& base, const ResidualWeights& delta) {
  if (delta.generator_hash != base.hash())
    throw HashMismatch("residual weights belong to generator " + hex64(delta.generator_hash) +
                       ", not " + hex64(base.hash()));
  for (std::size_t j = 0; j < delta.layers.size() && j < base.num_layers(); ++j)
    if (delta.layers[j].size() != base.kernel(j + 1).size())
      throw ShapeError("refine_generator", base.kernel(j + 1).shape(), delta.layers[j].shape());
  return base.refine(delta.layers);
}

MapperParamCount mapper_param_count(const LayerSpec& l, std::size_t F, std::size_t D) {
  const std::size_t kk = l.kernel * l.kernel;
  return {F * l.out_channels * D + D * l.in_channels * kk, F * l.out_channels * l.in_channels * kk};
}

std::size_t feature_transformer_param_count(std::size_t in, std::size_t F) {
  return kTransformerWidth * in * 9 + kTransformerWidth + F * kTransformerWidth * 9 + F;
}

}  // namespace hyperinv
