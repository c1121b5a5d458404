#pragma once

#include <stdexcept>
#include <string>

#include "hyperinv/tensor.hpp"

namespace hyperinv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an operation receives operands whose shapes do not fit.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, Shape lhs, Shape rhs)
      : Error(op + ": shape mismatch " + to_string(lhs) + " vs " + to_string(rhs)),
        op_(std::move(op)),
        lhs_(std::move(lhs)),
        rhs_(std::move(rhs)) {}

  const std::string& op() const noexcept { return op_; }
  const Shape& lhs() const noexcept { return lhs_; }
  const Shape& rhs() const noexcept { return rhs_; }

 private:
  std::string op_;
  Shape lhs_;
  Shape rhs_;
};

/// Raised for malformed or corrupted on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Raised when a weight set or latent code does not belong to the expected
/// generator checkpoint.
class HashMismatch : public Error {
 public:
  using Error::Error;
};

/// Raised when training produces a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : Error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

}  // namespace hyperinv
