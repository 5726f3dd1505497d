#include "gnnmapf/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gnnmapf {

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
  return std::abs(analytic - numeric) / scale;
}

GradientCheckResult gradient_check(const ScalarFunction& f, std::span<const double> point,
                                   std::span<const double> analytic, double h,
                                   std::span<const std::size_t> coordinates,
                                   const RegimeFunction& regime) {
  if (analytic.size() != point.size())
    throw std::invalid_argument("gradient_check: gradient and point sizes differ");
  std::vector<double> x(point.begin(), point.end());
  const std::uint64_t base_regime = regime ? regime(x) : 0;

  GradientCheckResult result;
  auto check = [&](std::size_t i) {
    const double original = x[i];
    x[i] = original + h;
    const double up = f(x);
    const bool up_same = !regime || regime(x) == base_regime;
    x[i] = original - h;
    const double down = f(x);
    const bool down_same = !regime || regime(x) == base_regime;
    x[i] = original;
    if (!up_same || !down_same) {
      ++result.skipped;
      return;
    }
    const double err = relative_error(analytic[i], (up - down) / (2.0 * h));
    ++result.checked;
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_coordinate = i;
    }
  };
  if (coordinates.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) check(i);
  } else {
    for (std::size_t i : coordinates) check(i);
  }
  return result;
}

}  // namespace gnnmapf
