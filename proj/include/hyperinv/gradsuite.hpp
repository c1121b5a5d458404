#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hyperinv/gradcheck.hpp"

namespace hyperinv {

/// Network-level expressions covered by the suite in addition to the
/// primitive ops.
std::span<const std::string_view> composite_kinds();

/// Gradient check of one composite on small toy dimensions. Inputs and
/// parameters are seeded; parameter tensors are checked on a seeded subset
/// of coordinates.
GradCheckReport composite_check(std::string_view kind, std::uint64_t seed);

struct GradSuiteRow {
  std::string item;
  bool composite = false;
  std::size_t case_index = 0;
  GradCheckReport report;
  bool passed() const noexcept { return report.max_relative_error <= kGradCheckTolerance; }
};

/// `cases` seeded cases for every primitive op (with varying shapes) and
/// every composite.
std::vector<GradSuiteRow> gradient_suite(std::size_t cases, std::uint64_t seed);

}  // namespace hyperinv
