#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace gnnmapf {

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crossed a kink
};

// Denominator floor for relative error; below it the comparison is absolute.
inline constexpr double kRelativeErrorFloor = 1e-6;

double relative_error(double analytic, double numeric);

using ScalarFunction = std::function<double(std::span<const double>)>;
// Signature of the piecewise-linear regime at a point (ReLU masks, pooling
// argmax). Coordinates whose +/-h evaluations change it are skipped.
using RegimeFunction = std::function<std::uint64_t(std::span<const double>)>;

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h against `analytic` for
// every coordinate in `coordinates` (all coordinates when empty).
GradientCheckResult gradient_check(const ScalarFunction& f, std::span<const double> point,
                                   std::span<const double> analytic, double h = 1e-5,
                                   std::span<const std::size_t> coordinates = {},
                                   const RegimeFunction& regime = {});

}  // namespace gnnmapf
