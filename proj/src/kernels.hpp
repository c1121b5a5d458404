#pragma once

// Value-level kernels behind the graph ops. Every kernel is deterministic:
// reductions run in a fixed order independent of thread count.

#include <functional>
#include <span>

#include "hyperinv/tensor.hpp"

namespace hyperinv::kernels {

enum class Binary { Add, Sub, Mul, Div };

Tensor binary(Binary op, const Tensor& a, const Tensor& b, const char* name);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor sum_to(const Tensor& x, const Shape& shape);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, k, ho, wo;
  int stride, pad;
  bool per_sample;
};
ConvGeom conv_geom(const Shape& x, const Shape& w, int stride, int pad, const char* name);

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
Tensor conv2d_input_grad(const Tensor& dy, const Tensor& w, const Shape& x_shape, int stride,
                         int pad);
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& dy, const Shape& w_shape, int stride,
                          int pad);

Tensor upsample2x(const Tensor& x);
Tensor sum_pool2x(const Tensor& x);

Tensor concat(std::span<const Tensor* const> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor slice_grad(const Tensor& g, const Shape& full, std::size_t axis, std::size_t start);

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  const double* in = x.ptr();
  double* o = out.ptr();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace hyperinv::kernels
