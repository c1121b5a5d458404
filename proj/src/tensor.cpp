#include "hyperinv/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "hyperinv/error.hpp"

namespace hyperinv {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size())
    throw ShapeError("tensor", shape_, Shape{data_.size()});
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item", shape_, Shape{1});
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  if (numel(shape) != data_.size()) throw ShapeError("reshape", shape_, shape);
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) && {
  if (numel(shape) != data_.size()) throw ShapeError("reshape", shape_, shape);
  return Tensor(std::move(shape), std::move(data_));
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool bit_equal(const Tensor& a, const Tensor& b) noexcept {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0;
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t content_hash(const Tensor& t, std::uint64_t h) noexcept {
  for (auto d : t.shape()) {
    std::uint64_t v = d;
    h = fnv1a({reinterpret_cast<const unsigned char*>(&v), sizeof v}, h);
  }
  return fnv1a({reinterpret_cast<const unsigned char*>(t.ptr()), t.size() * sizeof(double)}, h);
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

double max_abs(const Tensor& t) noexcept {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double mean_abs(const Tensor& t) noexcept {
  if (t.empty()) return 0.0;
  double s = 0.0;
  for (double v : t.data()) s += std::abs(v);
  return s / static_cast<double>(t.size());
}

}  // namespace hyperinv
