#pragma once

#include <span>
#include <vector>

namespace dualflow {

/// Monotone cubic interpolant (Fritsch-Carlson / PCHIP). Shape-preserving:
/// monotone data stays monotone, no overshoot. Evaluation outside the
/// abscissa range throws grid_error; inverse-flow coefficient lookups rely
/// on that to surface blow-ups instead of extrapolating past them.
class MonotoneCubic {
 public:
  MonotoneCubic() = default;
  MonotoneCubic(std::span<const double> xs, std::span<const double> ys);

  double operator()(double x) const;
  double derivative(double x) const;

  bool empty() const { return xs_.empty(); }
  double x_min() const { return xs_.front(); }
  double x_max() const { return xs_.back(); }

 private:
  int locate(double x) const;

  std::vector<double> xs_;
  std::vector<double> ys_;
  std::vector<double> slopes_;  // endpoint derivatives per node
};

/// Piecewise-linear interpolation on sorted abscissae; throws grid_error
/// outside the range.
double lerp_sorted(std::span<const double> xs, std::span<const double> ys, double x);

/// Index i such that xs[i] <= x <= xs[i+1]; throws grid_error outside.
int bracket_index(std::span<const double> xs, double x);

}  // namespace dualflow
