#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "hyperinv/graph.hpp"

namespace hyperinv {

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-5;
inline constexpr double kRelativeErrorFloor = 1e-8;
inline constexpr double kRelativeErrorScale = 1e-3;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t skipped = 0;  // probes that crossed a leaky relu kink
};

/// Builds the checked expression from graph leaves holding the inputs.
using GraphFn = std::function<Var(std::span<const Var>)>;

/// Compares reverse-mode gradients of <r, f(inputs)> (r a fixed seeded normal
/// projection) against central finite differences on every input coordinate,
/// or on `max_coords` seeded coordinates per input when nonzero. Relative
/// error is |a - b| / max(|a|, |b|, floor) with floor = max(1e-8, 1e-3 *
/// max |analytic gradient| of that input), so coordinates far below the
/// input's gradient scale are compared at the rounding level of the
/// difference quotient. Coordinates whose +-step
/// probes change a leaky relu branch are counted as skipped, not scored.
GradCheckReport check_gradients(const GraphFn& f, std::vector<Tensor> inputs, std::uint64_t seed,
                                std::size_t max_coords = 0,
                                double step = kFiniteDifferenceStep);

/// Names accepted by grad_check().
std::span<const std::string_view> primitive_op_kinds();

/// Gradient check of one primitive op on N(0,1) inputs of the given shapes.
/// Throws Error for an unknown op kind.
GradCheckReport grad_check(std::string_view op_kind, std::span<const Shape> input_shapes,
                           std::uint64_t seed);

}  // namespace hyperinv
