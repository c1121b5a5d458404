#include "kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "hyperinv/error.hpp"
#include "hyperinv/graph.hpp"

namespace hyperinv::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// Strides of `s` laid out against an output of rank `r`; broadcast axes get 0.
std::vector<std::size_t> aligned_strides(const Shape& s, std::size_t r) {
  std::vector<std::size_t> st(r, 0);
  const std::size_t off = r - s.size();
  std::size_t stride = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[off + i] = s[i] == 1 ? 0 : stride;
    stride *= s[i];
  }
  return st;
}

// Calls f(out_offset, a_offset, b_offset, a_inner_stride, b_inner_stride, inner)
// for every innermost row of a broadcast iteration over `out`. Adjacent axes
// that both operands traverse contiguously are merged first.
template <class F>
void for_each_row(const Shape& out_shape, const std::vector<std::size_t>& sa_in,
                  const std::vector<std::size_t>& sb_in, F f) {
  if (numel(out_shape) == 0) return;
  Shape out;
  std::vector<std::size_t> sa, sb;
  for (std::size_t d = 0; d < out_shape.size(); ++d) {
    if (out_shape[d] == 1) continue;
    if (!out.empty() && sa.back() == sa_in[d] * out_shape[d] &&
        sb.back() == sb_in[d] * out_shape[d]) {
      out.back() *= out_shape[d];
      sa.back() = sa_in[d];
      sb.back() = sb_in[d];
      continue;
    }
    out.push_back(out_shape[d]);
    sa.push_back(sa_in[d]);
    sb.push_back(sb_in[d]);
  }
  if (out.empty()) {
    f(0, 0, 0, 0, 0, 1);
    return;
  }
  const std::size_t r = out.size();
  const std::size_t inner = out[r - 1];
  const std::size_t outer = numel(out) / inner;
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d + 1 < r; ++d) {
      ia += idx[d] * sa[d];
      ib += idx[d] * sb[d];
    }
    f(o * inner, ia, ib, sa[r - 1], sb[r - 1], inner);
    for (std::size_t d = r - 1; d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
}

template <class Op>
Tensor binary_impl(const Tensor& a, const Tensor& b, const char* name, Op op) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    double* po = out.ptr();
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) po[i] = op(pa[i], pb[i]);
    return out;
  }
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  Tensor out(os);
  const auto sa = aligned_strides(a.shape(), os.size());
  const auto sb = aligned_strides(b.shape(), os.size());
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  for_each_row(os, sa, sb,
               [&](std::size_t oo, std::size_t ia, std::size_t ib, std::size_t ta,
                   std::size_t tb, std::size_t inner) {
                 for (std::size_t t = 0; t < inner; ++t)
                   po[oo + t] = op(pa[ia + t * ta], pb[ib + t * tb]);
               });
  return out;
}

}  // namespace

Tensor binary(Binary op, const Tensor& a, const Tensor& b, const char* name) {
  switch (op) {
    case Binary::Add:
      return binary_impl(a, b, name, [](double x, double y) { return x + y; });
    case Binary::Sub:
      return binary_impl(a, b, name, [](double x, double y) { return x - y; });
    case Binary::Mul:
      return binary_impl(a, b, name, [](double x, double y) { return x * y; });
    case Binary::Div:
      return binary_impl(a, b, name, [](double x, double y) { return x / y; });
  }
  return {};
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape, "broadcast_to") != shape)
    throw ShapeError("broadcast_to", x.shape(), shape);
  if (x.shape() == shape) return x;
  Tensor out(shape);
  const auto sx = aligned_strides(x.shape(), shape.size());
  const std::vector<std::size_t> none(shape.size(), 0);
  const double* px = x.ptr();
  double* po = out.ptr();
  for_each_row(shape, sx, none,
               [&](std::size_t oo, std::size_t ix, std::size_t, std::size_t tx, std::size_t,
                   std::size_t inner) {
                 for (std::size_t t = 0; t < inner; ++t) po[oo + t] = px[ix + t * tx];
               });
  return out;
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (shape.size() > x.rank()) throw ShapeError("sum_to", x.shape(), shape);
  const std::size_t off = x.rank() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] != 1 && shape[i] != x.dim(off + i)) throw ShapeError("sum_to", x.shape(), shape);
  if (x.shape() == shape) return x;
  Tensor out(shape);
  // Strides of the output indexed by x's axes; summed axes get 0.
  std::vector<std::size_t> so(x.rank(), 0);
  {
    std::size_t stride = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
      so[off + i] = shape[i] == 1 ? 0 : stride;
      stride *= shape[i];
    }
  }
  const std::vector<std::size_t> dense = aligned_strides(x.shape(), x.rank());
  const double* px = x.ptr();
  double* po = out.ptr();
  for_each_row(x.shape(), so, dense,
               [&](std::size_t ox, std::size_t io, std::size_t, std::size_t to, std::size_t,
                   std::size_t inner) {
                 if (to == 0) {
                   double acc = po[io];
                   for (std::size_t t = 0; t < inner; ++t) acc += px[ox + t];
                   po[io] = acc;
                 } else {
                   for (std::size_t t = 0; t < inner; ++t) po[io + t * to] += px[ox + t];
                 }
               });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul", a.shape(), b.shape());
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Tensor out({a.dim(0), b.dim(1)});
  // Row by row so a row's result does not depend on how many rows share the
  // batch.
  const CMapMat bm(b.ptr(), k, n);
  MapMat om(out.ptr(), m, n);
  const CMapMat am(a.ptr(), m, k);
  for (Eigen::Index i = 0; i < m; ++i) om.row(i).noalias() = am.row(i) * bm;
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose", a.shape(), Shape{0, 0});
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

// ---------------------------------------------------------------------------
// Convolution. Per sample: Y (Cout x P) = W (Cout x K) * cols (K x P), with
// K = Cin*k*k and P = Ho*Wo.

ConvGeom conv_geom(const Shape& x, const Shape& w, int stride, int pad, const char* name) {
  if (x.size() != 4 || (w.size() != 4 && w.size() != 5) || stride < 1 || pad < 0)
    throw ShapeError(name, x, w);
  ConvGeom g{};
  g.per_sample = w.size() == 5;
  const std::size_t o = g.per_sample ? 1 : 0;
  if (g.per_sample && w[0] != x[0]) throw ShapeError(name, x, w);
  g.batch = x[0];
  g.cin = x[1];
  g.h = x[2];
  g.w = x[3];
  g.cout = w[o];
  g.k = w[o + 2];
  if (w[o + 1] != g.cin || w[o + 3] != g.k) throw ShapeError(name, x, w);
  const long hp = static_cast<long>(g.h) + 2 * pad - static_cast<long>(g.k);
  const long wp = static_cast<long>(g.w) + 2 * pad - static_cast<long>(g.k);
  if (hp < 0 || wp < 0) throw ShapeError(name, x, w);
  g.ho = static_cast<std::size_t>(hp / stride + 1);
  g.wo = static_cast<std::size_t>(wp / stride + 1);
  g.stride = stride;
  g.pad = pad;
  return g;
}

namespace {

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

// Output columns [lo, hi) whose input column ox*stride + kx - pad is in range.
void valid_span(const ConvGeom& g, long kx, std::size_t& lo, std::size_t& hi) {
  const long s = g.stride;
  const long first = g.pad - kx;
  const long a = first <= 0 ? 0 : (first + s - 1) / s;
  const long last = static_cast<long>(g.w) - 1 + g.pad - kx;
  const long b = last < 0 ? 0 : last / s + 1;
  lo = static_cast<std::size_t>(std::min<long>(a, static_cast<long>(g.wo)));
  hi = static_cast<std::size_t>(std::clamp<long>(b, static_cast<long>(lo), static_cast<long>(g.wo)));
}

// Row r of the patch matrix starts at cols + r * ld.
void im2col(const ConvGeom& g, const double* x, double* cols, std::size_t ld) {
  const long k = static_cast<long>(g.k);
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * ld;
        std::size_t lo, hi;
        valid_span(g, kx, lo, hi);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride + ky - g.pad;
          double* r = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(r, r + g.wo, 0.0);
            continue;
          }
          const double* xr = xc + iy * g.w;
          const long off = kx - g.pad;
          std::fill(r, r + lo, 0.0);
          if (g.stride == 1) {
            std::copy(xr + (static_cast<long>(lo) + off), xr + (static_cast<long>(hi) + off), r + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) r[ox] = xr[static_cast<long>(ox) * g.stride + off];
          }
          std::fill(r + hi, r + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* cols, std::size_t ld, double* x) {
  const long k = static_cast<long>(g.k);
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* xc = x + c * g.h * g.w;
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * ld;
        std::size_t lo, hi;
        valid_span(g, kx, lo, hi);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride + ky - g.pad;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const double* r = row + oy * g.wo;
          double* xr = xc + iy * g.w;
          const long off = kx - g.pad;
          for (std::size_t ox = lo; ox < hi; ++ox) xr[static_cast<long>(ox) * g.stride + off] += r[ox];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  const ConvGeom g = conv_geom(x.shape(), w.shape(), stride, pad, "conv2d");
  const auto kk = static_cast<Eigen::Index>(g.cin * g.k * g.k);
  const auto p = static_cast<Eigen::Index>(g.ho * g.wo);
  const auto co = static_cast<Eigen::Index>(g.cout);
  Tensor out({g.batch, g.cout, g.ho, g.wo});
  std::vector<double> cols(is_pointwise(g) ? 0 : static_cast<std::size_t>(kk * p));
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* xb = x.ptr() + b * g.cin * g.h * g.w;
    const double* wb = w.ptr() + (g.per_sample ? b * g.cout * kk : 0);
    const double* src = xb;
    if (!is_pointwise(g)) {
      im2col(g, xb, cols.data(), static_cast<std::size_t>(p));
      src = cols.data();
    }
    MapMat(out.ptr() + b * g.cout * p, co, p).noalias() =
        CMapMat(wb, co, kk) * CMapMat(src, kk, p);
  }
  return out;
}

Tensor conv2d_input_grad(const Tensor& dy, const Tensor& w, const Shape& x_shape, int stride,
                         int pad) {
  const ConvGeom g = conv_geom(x_shape, w.shape(), stride, pad, "conv2d_input_grad");
  if (dy.shape() != Shape{g.batch, g.cout, g.ho, g.wo})
    throw ShapeError("conv2d_input_grad", dy.shape(), Shape{g.batch, g.cout, g.ho, g.wo});
  const auto kk = static_cast<Eigen::Index>(g.cin * g.k * g.k);
  const auto p = static_cast<Eigen::Index>(g.ho * g.wo);
  const auto co = static_cast<Eigen::Index>(g.cout);
  const std::size_t xs = g.cin * g.h * g.w;
  Tensor dx(x_shape);
  std::vector<double> cols(static_cast<std::size_t>(kk * p));
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* wb = w.ptr() + (g.per_sample ? b * g.cout * kk : 0);
    double* dxb = dx.ptr() + b * xs;
    const double* dyb = dy.ptr() + b * g.cout * p;
    if (is_pointwise(g)) {
      MapMat(dxb, kk, p).noalias() = CMapMat(wb, co, kk).transpose() * CMapMat(dyb, co, p);
    } else {
      MapMat(cols.data(), kk, p).noalias() =
          CMapMat(wb, co, kk).transpose() * CMapMat(dyb, co, p);
      col2im_add(g, cols.data(), static_cast<std::size_t>(p), dxb);
    }
  }
  return dx;
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& dy, const Shape& w_shape, int stride,
                          int pad) {
  const ConvGeom g = conv_geom(x.shape(), w_shape, stride, pad, "conv2d_weight_grad");
  if (dy.shape() != Shape{g.batch, g.cout, g.ho, g.wo})
    throw ShapeError("conv2d_weight_grad", dy.shape(), Shape{g.batch, g.cout, g.ho, g.wo});
  const auto kk = static_cast<Eigen::Index>(g.cin * g.k * g.k);
  const auto p = static_cast<Eigen::Index>(g.ho * g.wo);
  const auto co = static_cast<Eigen::Index>(g.cout);
  Tensor dw(w_shape);
  std::vector<double> cols(is_pointwise(g) ? 0 : static_cast<std::size_t>(kk * p));
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* xb = x.ptr() + b * g.cin * g.h * g.w;
    const double* src = xb;
    if (!is_pointwise(g)) {
      im2col(g, xb, cols.data(), static_cast<std::size_t>(p));
      src = cols.data();
    }
    const double* dyb = dy.ptr() + b * g.cout * p;
    if (g.per_sample) {
      MapMat(dw.ptr() + b * g.cout * kk, co, kk).noalias() =
          CMapMat(dyb, co, p) * CMapMat(src, kk, p).transpose();
    } else {
      MapMat(dw.ptr(), co, kk).noalias() += CMapMat(dyb, co, p) * CMapMat(src, kk, p).transpose();
    }
  }
  return dw;
}

// ---------------------------------------------------------------------------

Tensor upsample2x(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("upsample2x", x.shape(), Shape{1, 1});
  Shape os = x.shape();
  const std::size_t h = os[os.size() - 2], w = os[os.size() - 1];
  os[os.size() - 2] = 2 * h;
  os[os.size() - 1] = 2 * w;
  Tensor out(os);
  const std::size_t planes = x.size() / (h * w);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = x.ptr() + pl * h * w;
    double* dst = out.ptr() + pl * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
  }
  return out;
}

Tensor sum_pool2x(const Tensor& x) {
  if (x.rank() < 2 || x.dim(x.rank() - 1) % 2 || x.dim(x.rank() - 2) % 2)
    throw ShapeError("sum_pool2x", x.shape(), Shape{2, 2});
  Shape os = x.shape();
  const std::size_t h = os[os.size() - 2] / 2, w = os[os.size() - 1] / 2;
  os[os.size() - 2] = h;
  os[os.size() - 1] = w;
  Tensor out(os);
  const std::size_t planes = out.size() / (h * w);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = x.ptr() + pl * 4 * h * w;
    double* dst = out.ptr() + pl * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        const double* r0 = src + (2 * y) * 2 * w + 2 * xx;
        const double* r1 = r0 + 2 * w;
        dst[y * w + xx] = (r0[0] + r0[1]) + (r1[0] + r1[1]);
      }
  }
  return out;
}

namespace {
// Splits a shape around `axis` into (outer, axis length, inner).
void split_axis(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace

Tensor concat(std::span<const Tensor* const> parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  Shape os = parts[0]->shape();
  if (axis >= os.size()) throw ShapeError("concat", os, Shape{axis});
  os[axis] = 0;
  for (const Tensor* p : parts) {
    Shape s = p->shape();
    if (s.size() != os.size()) throw ShapeError("concat", parts[0]->shape(), s);
    const std::size_t len = s[axis];
    s[axis] = 0;
    Shape ref = os;
    ref[axis] = 0;
    if (s != ref) throw ShapeError("concat", parts[0]->shape(), p->shape());
    os[axis] += len;
  }
  Tensor out(os);
  std::size_t outer, inner;
  split_axis(os, axis, outer, inner);
  const std::size_t row = os[axis] * inner;
  std::size_t offset = 0;
  for (const Tensor* p : parts) {
    const std::size_t chunk = p->dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p->ptr() + o * chunk, chunk, out.ptr() + o * row + offset);
    offset += chunk;
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.dim(axis) || length == 0)
    throw ShapeError("slice", x.shape(), Shape{axis, start, length});
  Shape os = x.shape();
  os[axis] = length;
  Tensor out(os);
  std::size_t outer, inner;
  split_axis(x.shape(), axis, outer, inner);
  const std::size_t row = x.dim(axis) * inner;
  const std::size_t chunk = length * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.ptr() + o * row + start * inner, chunk, out.ptr() + o * chunk);
  return out;
}

Tensor slice_grad(const Tensor& g, const Shape& full, std::size_t axis, std::size_t start) {
  Shape expect = full;
  if (axis >= full.size()) throw ShapeError("slice_grad", g.shape(), full);
  expect[axis] = g.shape().at(axis);
  if (g.shape() != expect || start + expect[axis] > full[axis])
    throw ShapeError("slice_grad", g.shape(), full);
  Tensor out(full);
  std::size_t outer, inner;
  split_axis(full, axis, outer, inner);
  const std::size_t row = full[axis] * inner;
  const std::size_t chunk = g.dim(axis) * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(g.ptr() + o * chunk, chunk, out.ptr() + o * row + start * inner);
  return out;
}

}  // namespace hyperinv::kernels
