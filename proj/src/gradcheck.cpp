#include "hyperinv/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "hyperinv/error.hpp"
#include "hyperinv/rng.hpp"

namespace hyperinv {

GradCheckReport check_gradients(const GraphFn& f, std::vector<Tensor> inputs, std::uint64_t seed,
                                std::size_t max_coords, double step) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(g.param(t));
  const Var y = f(leaves);
  Rng rng(derive_seed(seed, "gradcheck.projection"));
  const Tensor proj = rng.normal(y.shape());
  const Var score = sum(y * g.constant(proj));
  const std::vector<Var> grads = g.backward(score, leaves);
  std::vector<Tensor> analytic;
  analytic.reserve(grads.size());
  for (const Var& v : grads) analytic.push_back(v.value());

  const std::uint64_t branches = g.kink_signature();
  Rng pick(derive_seed(seed, "gradcheck.coords"));
  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::size_t n = inputs[k].size();
    double scale = 0.0;
    for (double v : analytic[k].data()) scale = std::max(scale, std::abs(v));
    const double floor = std::max(kRelativeErrorFloor, kRelativeErrorScale * scale);
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords && n > max_coords) {
      // Partial Fisher-Yates keeps the first max_coords of a seeded shuffle.
      for (std::size_t i = 0; i < max_coords; ++i)
        std::swap(coords[i], coords[i + pick.below(n - i)]);
      coords.resize(max_coords);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      Tensor plus = inputs[k];
      Tensor minus = inputs[k];
      plus[c] += step;
      minus[c] -= step;
      // Effective step: exact by Sterbenz since the operands are close.
      const double h = plus[c] - minus[c];
      g.bind(leaves[k], plus);
      const Tensor yp = y.value();
      const bool crossed_plus = g.kink_signature() != branches;
      g.bind(leaves[k], minus);
      const Tensor ym = y.value();
      if (crossed_plus || g.kink_signature() != branches) {
        ++report.skipped;
        continue;
      }
      double numeric = 0.0;
      for (std::size_t o = 0; o < yp.size(); ++o) numeric += proj[o] * ((yp[o] - ym[o]) / h);
      const double a = analytic[k][c];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      report.max_relative_error = std::max(report.max_relative_error, std::abs(a - numeric) / denom);
      ++report.coordinates;
    }
    g.bind(leaves[k], inputs[k]);
  }
  return report;
}

namespace {

constexpr std::array<std::string_view, 15> kPrimitiveOps = {
    "matmul",  "conv2d",      "modulated-conv2d", "leaky-relu", "upsample-nearest-2x",
    "concat",  "reduce-mean", "reduce-sum",       "square",     "sqrt",
    "softplus", "sigmoid",    "reshape",          "broadcast-add", "broadcast-mul"};

void expect_inputs(std::string_view op, std::span<const Shape> shapes, std::size_t n) {
  if (shapes.size() != n)
    throw Error("grad_check " + std::string(op) + ": expected " + std::to_string(n) +
                " input shapes, got " + std::to_string(shapes.size()));
}

}  // namespace

std::span<const std::string_view> primitive_op_kinds() { return kPrimitiveOps; }

GradCheckReport grad_check(std::string_view op, std::span<const Shape> shapes, std::uint64_t seed) {
  if (std::find(kPrimitiveOps.begin(), kPrimitiveOps.end(), op) == kPrimitiveOps.end())
    throw Error("grad_check: unknown op kind '" + std::string(op) + "'");
  Rng rng(derive_seed(seed, "gradcheck.inputs"));
  std::vector<Tensor> inputs;
  for (const Shape& s : shapes) inputs.push_back(rng.normal(s));

  GraphFn fn;
  if (op == "matmul") {
    expect_inputs(op, shapes, 2);
    fn = [](std::span<const Var> v) { return matmul(v[0], v[1]); };
  } else if (op == "conv2d") {
    expect_inputs(op, shapes, 2);
    const int pad = static_cast<int>(shapes[1].at(2) / 2);
    fn = [pad](std::span<const Var> v) { return conv2d(v[0], v[1], 1, pad); };
  } else if (op == "modulated-conv2d") {
    expect_inputs(op, shapes, 3);
    const int pad = static_cast<int>(shapes[1].at(shapes[1].size() - 1) / 2);
    fn = [pad](std::span<const Var> v) { return modulated_conv2d(v[0], v[1], v[2], true, pad); };
  } else if (op == "leaky-relu") {
    expect_inputs(op, shapes, 1);
    // Keep samples away from the kink so the central difference is valid.
    for (double& x : inputs[0].data())
      if (std::abs(x) < 1e-3) x = x < 0 ? -1e-3 : 1e-3;
    fn = [](std::span<const Var> v) { return leaky_relu(v[0]); };
  } else if (op == "upsample-nearest-2x") {
    expect_inputs(op, shapes, 1);
    fn = [](std::span<const Var> v) { return upsample2x(v[0]); };
  } else if (op == "concat") {
    if (shapes.empty()) throw Error("grad_check concat: needs at least one input");
    fn = [](std::span<const Var> v) { return concat(v, 0); };
  } else if (op == "reduce-mean") {
    expect_inputs(op, shapes, 1);
    fn = [](std::span<const Var> v) {
      const std::size_t axes[] = {0};
      return reduce_mean(v[0], axes, false);
    };
  } else if (op == "reduce-sum") {
    expect_inputs(op, shapes, 1);
    fn = [](std::span<const Var> v) { return sum(v[0]); };
  } else if (op == "square") {
    expect_inputs(op, shapes, 1);
    fn = [](std::span<const Var> v) { return square(v[0]); };
  } else if (op == "sqrt") {
    expect_inputs(op, shapes, 1);
    for (double& x : inputs[0].data()) x = std::abs(x) + 0.5;
    fn = [](std::span<const Var> v) { return sqrt(v[0]); };
  } else if (op == "softplus") {
    expect_inputs(op, shapes, 1);
    fn = [](std::span<const Var> v) { return softplus(v[0]); };
  } else if (op == "sigmoid") {
    expect_inputs(op, shapes, 1);
    fn = [](std::span<const Var> v) { return sigmoid(v[0]); };
  } else if (op == "reshape") {
    expect_inputs(op, shapes, 1);
    const Shape flat{numel(shapes[0])};
    fn = [flat](std::span<const Var> v) { return reshape(v[0], flat); };
  } else if (op == "broadcast-add") {
    expect_inputs(op, shapes, 2);
    fn = [](std::span<const Var> v) { return v[0] + v[1]; };
  } else {  // broadcast-mul
    expect_inputs(op, shapes, 2);
    fn = [](std::span<const Var> v) { return v[0] * v[1]; };
  }
  return check_gradients(fn, std::move(inputs), seed);
}

}  // namespace hyperinv
