#include "hyperinv/nn.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "hyperinv/error.hpp"

namespace hyperinv {

VarMap bind_params(Graph& g, const NamedTensors& params, bool trainable, std::string_view prefix) {
  VarMap out;
  for (auto it = params.lower_bound(std::string(prefix));
       it != params.end() && it->first.starts_with(prefix); ++it)
    out.emplace(it->first, g.input(it->second, trainable));
  return out;
}

NamedTensors gradients(Graph& g, Var loss, const VarMap& vars) {
  std::vector<Var> wrt;
  wrt.reserve(vars.size());
  for (const auto& [name, v] : vars) wrt.push_back(v);
  const std::vector<Var> grads = g.backward(loss, wrt);
  NamedTensors out;
  std::size_t i = 0;
  for (const auto& [name, v] : vars) out.emplace(name, grads[i++].value());
  return out;
}

const Var& param_at(const VarMap& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw Error("missing parameter '" + name + "'");
  return it->second;
}

Var conv_layer(const VarMap& p, const std::string& name, Var x, int stride, int pad) {
  const Var& w = param_at(p, name + ".weight");
  const Var& b = param_at(p, name + ".bias");
  Var y = conv2d(x, w, stride, pad);
  return y + reshape(b, Shape{1, b.shape()[0], 1, 1});
}

Var linear(const VarMap& p, const std::string& name, Var x) {
  return matmul(x, param_at(p, name + ".weight")) + param_at(p, name + ".bias");
}

void init_conv(NamedTensors& params, const std::string& name, std::size_t cout, std::size_t cin,
               std::size_t k, Rng& rng, double gain) {
  const double stddev = gain / std::sqrt(static_cast<double>(cin * k * k));
  params[name + ".weight"] = rng.normal({cout, cin, k, k}, stddev);
  params[name + ".bias"] = Tensor({cout});
}

void init_linear(NamedTensors& params, const std::string& name, std::size_t in, std::size_t out,
                 Rng& rng, double gain) {
  params[name + ".weight"] = rng.normal({in, out}, gain / std::sqrt(static_cast<double>(in)));
  params[name + ".bias"] = Tensor({out});
}

std::size_t parameter_count(const NamedTensors& params, std::string_view prefix) {
  std::size_t n = 0;
  for (const auto& [name, t] : params)
    if (name.starts_with(prefix)) n += t.size();
  return n;
}

std::uint64_t params_hash(const NamedTensors& params, std::string_view prefix) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params) {
    if (!name.starts_with(prefix)) continue;
    h = fnv1a({reinterpret_cast<const unsigned char*>(name.data()), name.size()}, h);
    h = content_hash(t, h);
  }
  return h;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw Error("stack: no items");
  Shape s = items[0].shape();
  const std::size_t n = items[0].size();
  std::vector<double> data;
  data.reserve(n * items.size());
  for (const Tensor& t : items) {
    if (t.shape() != s) throw ShapeError("stack", s, t.shape());
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  s.insert(s.begin(), items.size());
  return Tensor(std::move(s), std::move(data));
}

Tensor unstack(const Tensor& batch, std::size_t i) {
  if (batch.rank() < 2 || i >= batch.dim(0)) throw ShapeError("unstack", batch.shape(), Shape{i});
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = numel(s);
  return Tensor(std::move(s),
                std::vector<double>(batch.ptr() + i * n, batch.ptr() + (i + 1) * n));
}

}  // namespace hyperinv
