#include "hyperinv/graph.hpp"

#include <algorithm>
#include <cmath>

#include "hyperinv/error.hpp"
#include "kernels.hpp"

namespace hyperinv {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Conv2dInputGrad: return "conv2d_input_grad";
    case OpKind::Conv2dWeightGrad: return "conv2d_weight_grad";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::LeakyReluSlope: return "leaky_relu_slope";
    case OpKind::Upsample2x: return "upsample2x";
    case OpKind::SumPool2x: return "sum_pool2x";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::SliceGrad: return "slice_grad";
    case OpKind::Reshape: return "reshape";
    case OpKind::BroadcastTo: return "broadcast_to";
    case OpKind::SumTo: return "sum_to";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Softplus: return "softplus";
    case OpKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) throw ShapeError(std::string(op), a, b);
    out[i] = da == 1 ? db : da;
  }
  return out;
}

const Tensor& Var::value() const { return g_->evaluate(*this); }
const Shape& Var::shape() const { return value().shape(); }

// ---------------------------------------------------------------------------

Var Graph::input(Tensor value, bool requires_grad) {
  Node n{OpKind::Leaf, {}, {}, std::move(value), epoch_, requires_grad};
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Graph::bind(Var leaf, Tensor value) {
  Node& n = nodes_.at(leaf.id());
  if (n.kind != OpKind::Leaf) throw Error("bind: node is not a leaf");
  if (n.value.shape() != value.shape()) throw ShapeError("bind", n.value.shape(), value.shape());
  n.value = std::move(value);
  ++epoch_;
  n.epoch = epoch_;
  first_stale_ = std::min(first_stale_, leaf.id() + 1);
}

std::uint64_t Graph::kink_signature() {
  if (nodes_.empty()) return 0;
  evaluate(Var(this, static_cast<std::uint32_t>(nodes_.size() - 1)));
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Node& n : nodes_) {
    if (n.kind != OpKind::LeakyRelu && n.kind != OpKind::LeakyReluSlope) continue;
    for (double x : nodes_[n.inputs[0]].value.data()) {
      h ^= x >= 0.0 ? 1u : 2u;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

const Tensor& Graph::evaluate(Var v) {
  if (v.g_ != this) throw Error("evaluate: node belongs to another graph");
  const std::uint32_t id = v.id();
  if (first_stale_ <= id) {
    for (std::uint32_t i = first_stale_; i <= id; ++i) {
      Node& n = nodes_[i];
      if (n.kind != OpKind::Leaf && n.epoch != epoch_) recompute(i);
      n.epoch = epoch_;
    }
    first_stale_ = id + 1 < nodes_.size() ? id + 1 : UINT32_MAX;
  }
  return nodes_[id].value;
}

Var Graph::emit(OpKind kind, std::span<const Var> inputs, OpAttrs attrs) {
  Node n{kind, {}, std::move(attrs), {}, epoch_};
  n.inputs.reserve(inputs.size());
  std::uint32_t top = 0;
  for (const Var& v : inputs) {
    if (v.g_ != this) throw Error(std::string(op_name(kind)) + ": operands from different graphs");
    n.inputs.push_back(v.id());
    top = std::max(top, v.id());
  }
  if (!inputs.empty()) evaluate(Var(this, top));
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  try {
    recompute(id);
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return Var(this, id);
}

void Graph::recompute(std::uint32_t id) {
  Node& n = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
  const OpAttrs& a = n.attrs;
  using kernels::Binary;
  switch (n.kind) {
    case OpKind::Leaf:
      return;
    case OpKind::Add:
      n.value = kernels::binary(Binary::Add, in(0), in(1), "add");
      return;
    case OpKind::Sub:
      n.value = kernels::binary(Binary::Sub, in(0), in(1), "sub");
      return;
    case OpKind::Mul:
      n.value = kernels::binary(Binary::Mul, in(0), in(1), "mul");
      return;
    case OpKind::Div:
      n.value = kernels::binary(Binary::Div, in(0), in(1), "div");
      return;
    case OpKind::Neg:
      n.value = kernels::map(in(0), [](double v) { return -v; });
      return;
    case OpKind::Scale: {
      const double c = a.scalar;
      n.value = kernels::map(in(0), [c](double v) { return v * c; });
      return;
    }
    case OpKind::AddScalar: {
      const double c = a.scalar;
      n.value = kernels::map(in(0), [c](double v) { return v + c; });
      return;
    }
    case OpKind::MatMul:
      n.value = kernels::matmul(in(0), in(1));
      return;
    case OpKind::Transpose:
      n.value = kernels::transpose(in(0));
      return;
    case OpKind::Conv2d:
      n.value = kernels::conv2d(in(0), in(1), a.stride, a.pad);
      return;
    case OpKind::Conv2dInputGrad:
      n.value = kernels::conv2d_input_grad(in(0), in(1), a.shape, a.stride, a.pad);
      return;
    case OpKind::Conv2dWeightGrad:
      n.value = kernels::conv2d_weight_grad(in(0), in(1), a.shape, a.stride, a.pad);
      return;
    case OpKind::LeakyRelu: {
      const double s = a.scalar;
      n.value = kernels::map(in(0), [s](double v) { return v >= 0.0 ? v : s * v; });
      return;
    }
    case OpKind::LeakyReluSlope: {
      const double s = a.scalar;
      n.value = kernels::map(in(0), [s](double v) { return v >= 0.0 ? 1.0 : s; });
      return;
    }
    case OpKind::Upsample2x:
      n.value = kernels::upsample2x(in(0));
      return;
    case OpKind::SumPool2x:
      n.value = kernels::sum_pool2x(in(0));
      return;
    case OpKind::Concat: {
      std::vector<const Tensor*> parts;
      parts.reserve(n.inputs.size());
      for (std::size_t k = 0; k < n.inputs.size(); ++k) parts.push_back(&in(k));
      n.value = kernels::concat(parts, a.axis);
      return;
    }
    case OpKind::Slice:
      n.value = kernels::slice(in(0), a.axis, a.start, a.length);
      return;
    case OpKind::SliceGrad:
      n.value = kernels::slice_grad(in(0), a.shape, a.axis, a.start);
      return;
    case OpKind::Reshape:
      n.value = in(0).reshaped(a.shape);
      return;
    case OpKind::BroadcastTo:
      n.value = kernels::broadcast_to(in(0), a.shape);
      return;
    case OpKind::SumTo:
      n.value = kernels::sum_to(in(0), a.shape);
      return;
    case OpKind::Square:
      n.value = kernels::map(in(0), [](double v) { return v * v; });
      return;
    case OpKind::Sqrt:
      n.value = kernels::map(in(0), [](double v) { return std::sqrt(v); });
      return;
    case OpKind::Softplus:
      n.value = kernels::map(in(0), [](double v) {
        return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      });
      return;
    case OpKind::Sigmoid:
      n.value = kernels::map(in(0), [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
      return;
  }
}

// ---------------------------------------------------------------------------

void Graph::accumulate(std::vector<Var>& grads, std::uint32_t id, Var c) {
  Var& slot = grads[id];
  slot = slot.valid() ? add(slot, c) : c;
}

namespace {
// Reduces a broadcast gradient back onto an operand's shape.
Var unbroadcast(Var g, const Shape& target) {
  return g.shape() == target ? g : sum_to(g, target);
}
}  // namespace

void Graph::vjp(std::uint32_t id, Var g, std::span<const char> need, std::vector<Var>& grads) {
  // Copy what we need: emitting nodes may not move deque elements, but the
  // node reference must not be used across emits for clarity.
  const OpKind kind = nodes_[id].kind;
  const std::vector<std::uint32_t> ins = nodes_[id].inputs;
  const OpAttrs a = nodes_[id].attrs;
  auto var = [&](std::size_t k) { return Var(this, ins[k]); };
  auto want = [&](std::size_t k) { return need[ins[k]] != 0; };
  const Var self(this, id);

  switch (kind) {
    case OpKind::Leaf:
    case OpKind::LeakyReluSlope:
      return;
    case OpKind::Add:
      if (want(0)) accumulate(grads, ins[0], unbroadcast(g, var(0).shape()));
      if (want(1)) accumulate(grads, ins[1], unbroadcast(g, var(1).shape()));
      return;
    case OpKind::Sub:
      if (want(0)) accumulate(grads, ins[0], unbroadcast(g, var(0).shape()));
      if (want(1)) accumulate(grads, ins[1], unbroadcast(neg(g), var(1).shape()));
      return;
    case OpKind::Mul:
      if (want(0)) accumulate(grads, ins[0], unbroadcast(g * var(1), var(0).shape()));
      if (want(1)) accumulate(grads, ins[1], unbroadcast(g * var(0), var(1).shape()));
      return;
    case OpKind::Div:
      if (want(0)) accumulate(grads, ins[0], unbroadcast(g / var(1), var(0).shape()));
      if (want(1))
        accumulate(grads, ins[1], unbroadcast(neg(g * self / var(1)), var(1).shape()));
      return;
    case OpKind::Neg:
      accumulate(grads, ins[0], neg(g));
      return;
    case OpKind::Scale:
      accumulate(grads, ins[0], scale(g, a.scalar));
      return;
    case OpKind::AddScalar:
      accumulate(grads, ins[0], g);
      return;
    case OpKind::MatMul:
      if (want(0)) accumulate(grads, ins[0], matmul(g, transpose(var(1))));
      if (want(1)) accumulate(grads, ins[1], matmul(transpose(var(0)), g));
      return;
    case OpKind::Transpose:
      accumulate(grads, ins[0], transpose(g));
      return;
    case OpKind::Conv2d:
      if (want(0))
        accumulate(grads, ins[0], conv2d_input_grad(g, var(1), var(0).shape(), a.stride, a.pad));
      if (want(1))
        accumulate(grads, ins[1], conv2d_weight_grad(var(0), g, var(1).shape(), a.stride, a.pad));
      return;
    case OpKind::Conv2dInputGrad:
      // inputs (dy, w); output has the shape of x.
      if (want(0)) accumulate(grads, ins[0], conv2d(g, var(1), a.stride, a.pad));
      if (want(1))
        accumulate(grads, ins[1], conv2d_weight_grad(g, var(0), var(1).shape(), a.stride, a.pad));
      return;
    case OpKind::Conv2dWeightGrad:
      // inputs (x, dy); output has the shape of w.
      if (want(0))
        accumulate(grads, ins[0], conv2d_input_grad(var(1), g, var(0).shape(), a.stride, a.pad));
      if (want(1)) accumulate(grads, ins[1], conv2d(var(0), g, a.stride, a.pad));
      return;
    case OpKind::LeakyRelu:
      accumulate(grads, ins[0], g * leaky_relu_slope(var(0), a.scalar));
      return;
    case OpKind::Upsample2x:
      accumulate(grads, ins[0], sum_pool2x(g));
      return;
    case OpKind::SumPool2x:
      accumulate(grads, ins[0], upsample2x(g));
      return;
    case OpKind::Concat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < ins.size(); ++k) {
        const std::size_t len = var(k).shape()[a.axis];
        if (want(k)) accumulate(grads, ins[k], slice(g, a.axis, offset, len));
        offset += len;
      }
      return;
    }
    case OpKind::Slice:
      accumulate(grads, ins[0], slice_grad(g, var(0).shape(), a.axis, a.start));
      return;
    case OpKind::SliceGrad:
      accumulate(grads, ins[0], slice(g, a.axis, a.start, var(0).shape()[a.axis]));
      return;
    case OpKind::Reshape:
      accumulate(grads, ins[0], reshape(g, var(0).shape()));
      return;
    case OpKind::BroadcastTo:
      accumulate(grads, ins[0], sum_to(g, var(0).shape()));
      return;
    case OpKind::SumTo:
      accumulate(grads, ins[0], broadcast_to(g, var(0).shape()));
      return;
    case OpKind::Square:
      accumulate(grads, ins[0], g * scale(var(0), 2.0));
      return;
    case OpKind::Sqrt:
      accumulate(grads, ins[0], scale(g, 0.5) / self);
      return;
    case OpKind::Softplus:
      accumulate(grads, ins[0], g * sigmoid(var(0)));
      return;
    case OpKind::Sigmoid:
      accumulate(grads, ins[0], g * (self * (1.0 - self)));
      return;
  }
}

std::vector<Var> Graph::backward(Var y, std::span<const Var> wrt) {
  if (numel(y.shape()) != 1) throw ShapeError("backward: source must be scalar", y.shape(), {1});
  const std::uint32_t top = y.id();
  std::vector<char> need(top + 1, 0);
  std::uint32_t lo = top + 1;
  for (const Var& w : wrt) {
    if (w.g_ != this) throw Error("backward: node belongs to another graph");
    if (w.id() <= top) {
      need[w.id()] = 1;
      lo = std::min(lo, w.id());
    }
  }
  for (std::uint32_t i = lo; i <= top; ++i) {
    if (need[i]) continue;
    for (std::uint32_t in : nodes_[i].inputs)
      if (need[in]) {
        need[i] = 1;
        break;
      }
  }

  std::vector<Var> grads(top + 1);
  if (need[top]) grads[top] = constant(Tensor(y.shape(), 1.0));
  for (std::uint32_t i = top + 1; i-- > lo;) {
    if (!need[i] || !grads[i].valid() || nodes_[i].kind == OpKind::Leaf) continue;
    vjp(i, grads[i], need, grads);
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() <= top && grads[w.id()].valid())
      out.push_back(grads[w.id()]);
    else
      out.push_back(constant(Tensor(w.shape(), 0.0)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Op builders.

namespace {
Var emit1(OpKind k, Var x, OpAttrs a = {}) {
  const Var in[] = {x};
  return x.graph().emit(k, in, std::move(a));
}
Var emit2(OpKind k, Var x, Var y, OpAttrs a = {}) {
  const Var in[] = {x, y};
  return x.graph().emit(k, in, std::move(a));
}
}  // namespace

Var add(Var a, Var b) { return emit2(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return emit2(OpKind::Sub, a, b); }
Var mul(Var a, Var b) { return emit2(OpKind::Mul, a, b); }
Var div(Var a, Var b) { return emit2(OpKind::Div, a, b); }
Var neg(Var a) { return emit1(OpKind::Neg, a); }
Var scale(Var a, double c) { return emit1(OpKind::Scale, a, {.scalar = c}); }
Var add_scalar(Var a, double c) { return emit1(OpKind::AddScalar, a, {.scalar = c}); }
Var matmul(Var a, Var b) { return emit2(OpKind::MatMul, a, b); }
Var transpose(Var a) { return emit1(OpKind::Transpose, a); }

Var conv2d(Var x, Var w, int stride, int pad) {
  return emit2(OpKind::Conv2d, x, w, {.stride = stride, .pad = pad});
}
Var conv2d_input_grad(Var dy, Var w, const Shape& x_shape, int stride, int pad) {
  return emit2(OpKind::Conv2dInputGrad, dy, w, {.shape = x_shape, .stride = stride, .pad = pad});
}
Var conv2d_weight_grad(Var x, Var dy, const Shape& w_shape, int stride, int pad) {
  return emit2(OpKind::Conv2dWeightGrad, x, dy, {.shape = w_shape, .stride = stride, .pad = pad});
}

Var leaky_relu(Var x, double slope) { return emit1(OpKind::LeakyRelu, x, {.scalar = slope}); }
Var leaky_relu_slope(Var x, double slope) {
  return emit1(OpKind::LeakyReluSlope, x, {.scalar = slope});
}
Var upsample2x(Var x) { return emit1(OpKind::Upsample2x, x); }
Var sum_pool2x(Var x) { return emit1(OpKind::SumPool2x, x); }

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  return parts[0].graph().emit(OpKind::Concat, parts, {.axis = axis});
}
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  return emit1(OpKind::Slice, x, {.axis = axis, .start = start, .length = length});
}
Var slice_grad(Var g, const Shape& full_shape, std::size_t axis, std::size_t start) {
  return emit1(OpKind::SliceGrad, g, {.shape = full_shape, .axis = axis, .start = start});
}

Var reshape(Var x, Shape shape) {
  if (x.shape() == shape) return x;
  return emit1(OpKind::Reshape, x, {.shape = std::move(shape)});
}
Var broadcast_to(Var x, Shape shape) {
  return emit1(OpKind::BroadcastTo, x, {.shape = std::move(shape)});
}
Var sum_to(Var x, Shape shape) { return emit1(OpKind::SumTo, x, {.shape = std::move(shape)}); }

Var square(Var x) { return emit1(OpKind::Square, x); }
Var sqrt(Var x) { return emit1(OpKind::Sqrt, x); }
Var softplus(Var x) { return emit1(OpKind::Softplus, x); }
Var sigmoid(Var x) { return emit1(OpKind::Sigmoid, x); }

Var sum(Var x) { return sum_to(x, Shape{1}); }
Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(numel(x.shape()))); }

Var reduce_sum(Var x, std::span<const std::size_t> axes, bool keepdims) {
  Shape kept = x.shape();
  for (std::size_t ax : axes) {
    if (ax >= kept.size()) throw ShapeError("reduce_sum", x.shape(), Shape{ax});
    kept[ax] = 1;
  }
  Var r = sum_to(x, kept);
  if (keepdims) return r;
  Shape squeezed;
  for (std::size_t i = 0; i < kept.size(); ++i)
    if (std::find(axes.begin(), axes.end(), i) == axes.end()) squeezed.push_back(kept[i]);
  if (squeezed.empty()) squeezed.push_back(1);
  return reshape(r, squeezed);
}

Var reduce_mean(Var x, std::span<const std::size_t> axes, bool keepdims) {
  std::size_t count = 1;
  for (std::size_t ax : axes) count *= x.shape().at(ax);
  return scale(reduce_sum(x, axes, keepdims), 1.0 / static_cast<double>(count));
}

Var modulated_conv2d(Var x, Var kernel, Var styles, bool demodulate, int pad) {
  const Shape& ks = kernel.shape();
  const Shape& ss = styles.shape();
  const std::size_t o = ks.size() == 5 ? 1 : 0;
  if ((ks.size() != 4 && ks.size() != 5) || ss.size() != 2 || ss[1] != ks[o + 1])
    throw ShapeError("modulated_conv2d", ks, ss);
  const std::size_t batch = ss[0];
  // [B,1,Cin,1,1] against [Cout,Cin,k,k] or [B,Cout,Cin,k,k].
  Var s = reshape(styles, Shape{batch, 1, ss[1], 1, 1});
  Var w = kernel * s;
  if (demodulate) {
    const std::size_t axes[] = {2, 3, 4};
    Var norm = sqrt(add_scalar(reduce_sum(square(w), axes, true), 1e-8));
    w = w / norm;
  }
  return conv2d(x, w, 1, pad);
}

}  // namespace hyperinv
