#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string_view>
#include <vector>

#include "hyperinv/tensor.hpp"

namespace hyperinv {

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Scale,
  AddScalar,
  MatMul,
  Transpose,
  Conv2d,
  Conv2dInputGrad,
  Conv2dWeightGrad,
  LeakyRelu,
  LeakyReluSlope,
  Upsample2x,
  SumPool2x,
  Concat,
  Slice,
  SliceGrad,
  Reshape,
  BroadcastTo,
  SumTo,
  Square,
  Sqrt,
  Softplus,
  Sigmoid,
};

std::string_view op_name(OpKind kind);

/// Per-node attributes. Only the fields an op uses are meaningful.
struct OpAttrs {
  Shape shape;
  double scalar = 0.0;
  int stride = 1;
  int pad = 0;
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t length = 0;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *g_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return g_ != nullptr; }

  /// Forward value, recomputed first if a bound leaf changed.
  const Tensor& value() const;
  const Shape& shape() const;

 private:
  friend class Graph;
  Var(Graph* g, std::uint32_t id) : g_(g), id_(id) {}

  Graph* g_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Append-only computation graph with eager forward evaluation.
///
/// Leaves may be rebound after construction; dependent nodes are recomputed
/// lazily on the next evaluate(). Gradients produced by backward() are
/// ordinary nodes of the same graph, so a gradient can itself be
/// differentiated (used by the R1 penalty). Single-owner, single-threaded.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor value, bool requires_grad = false);
  Var param(Tensor value) { return input(std::move(value), true); }
  Var constant(Tensor value) { return input(std::move(value), false); }

  /// Replaces the value of a leaf. The shape must not change.
  void bind(Var leaf, Tensor value);

  const Tensor& evaluate(Var v);

  /// Gradients of the scalar `y` with respect to each of `wrt`, as graph
  /// nodes. Inputs that `y` does not depend on get a zero constant.
  std::vector<Var> backward(Var y, std::span<const Var> wrt);

  Var emit(OpKind kind, std::span<const Var> inputs, OpAttrs attrs = {});

  /// Hash of the branch taken by every leaky relu (sign of its input) under
  /// the current bindings. Finite differences are only valid where it does
  /// not change.
  std::uint64_t kink_signature();

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(Var v) const { return nodes_.at(v.id()).kind; }
  bool is_leaf(Var v) const { return nodes_.at(v.id()).kind == OpKind::Leaf; }
  /// Whether a leaf was created as a trainable parameter.
  bool is_param(Var v) const { return nodes_.at(v.id()).param; }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::uint32_t> inputs;
    OpAttrs attrs;
    Tensor value;
    std::uint64_t epoch = 0;
    bool param = false;
  };

  void recompute(std::uint32_t id);
  void vjp(std::uint32_t id, Var g, std::span<const char> need,
           std::vector<Var>& grads);
  void accumulate(std::vector<Var>& grads, std::uint32_t id, Var contribution);

  std::deque<Node> nodes_;
  std::uint64_t epoch_ = 0;
  std::uint32_t first_stale_ = UINT32_MAX;
};

// ---------------------------------------------------------------------------
// Primitive ops. Binary elementwise ops broadcast with trailing-dimension
// alignment; the gradient of a broadcast operand is summed back to its shape.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

/// 2-D matrix product.
Var matmul(Var a, Var b);
Var transpose(Var a);

/// Same-shape cross-correlation. `x` is [B,Cin,H,W]; `w` is either a shared
/// kernel [Cout,Cin,k,k] or per-sample kernels [B,Cout,Cin,k,k].
Var conv2d(Var x, Var w, int stride = 1, int pad = 0);
Var conv2d_input_grad(Var dy, Var w, const Shape& x_shape, int stride, int pad);
Var conv2d_weight_grad(Var x, Var dy, const Shape& w_shape, int stride, int pad);

inline constexpr double kLeakySlope = 0.2;
Var leaky_relu(Var x, double slope = kLeakySlope);
/// Derivative of leaky_relu as a constant mask (1 where x >= 0, else slope).
Var leaky_relu_slope(Var x, double slope = kLeakySlope);

/// Nearest-neighbour 2x upsampling of the last two axes.
Var upsample2x(Var x);
/// 2x2 sum pooling of the last two axes (adjoint of upsample2x).
Var sum_pool2x(Var x);

Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
Var slice_grad(Var g, const Shape& full_shape, std::size_t axis, std::size_t start);

Var reshape(Var x, Shape shape);
Var broadcast_to(Var x, Shape shape);
/// Sums `x` down to `shape` (the inverse of broadcasting).
Var sum_to(Var x, Shape shape);

Var square(Var x);
Var sqrt(Var x);
Var softplus(Var x);
Var sigmoid(Var x);

// Composites.
Var sum(Var x);
Var mean(Var x);
Var reduce_sum(Var x, std::span<const std::size_t> axes, bool keepdims = false);
Var reduce_mean(Var x, std::span<const std::size_t> axes, bool keepdims = false);

/// StyleGAN2-style modulated convolution: the kernel is scaled per input
/// channel by `styles` [B,Cin] and, if `demodulate`, every output filter is
/// renormalised to unit L2 norm (eps 1e-8 inside the root).
Var modulated_conv2d(Var x, Var kernel, Var styles, bool demodulate, int pad);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(double c, Var a) { return add_scalar(neg(a), c); }

/// Broadcast shape of two operands under trailing alignment.
Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op);

}  // namespace hyperinv
