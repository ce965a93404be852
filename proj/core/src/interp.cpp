#include "dualflow/interp.hpp"

#include <algorithm>
#include <cmath>

#include "dualflow/errors.hpp"

namespace dualflow {

int bracket_index(std::span<const double> xs, double x) {
  if (xs.size() < 2) throw grid_error("bracket_index: need at least two nodes");
  if (x < xs.front() || x > xs.back()) throw grid_error("bracket_index: value outside grid");
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  int i = static_cast<int>(it - xs.begin()) - 1;
  i = std::clamp(i, 0, static_cast<int>(xs.size()) - 2);
  return i;
}

double lerp_sorted(std::span<const double> xs, std::span<const double> ys, double x) {
  const int i = bracket_index(xs, x);
  const double w = (x - xs[i]) / (xs[i + 1] - xs[i]);
  return ys[i] + w * (ys[i + 1] - ys[i]);
}

MonotoneCubic::MonotoneCubic(std::span<const double> xs, std::span<const double> ys)
    : xs_(xs.begin(), xs.end()), ys_(ys.begin(), ys.end()) {
  const int n = static_cast<int>(xs_.size());
  if (n < 2 || ys_.size() != xs_.size())
    throw grid_error("MonotoneCubic: need matching arrays with >= 2 nodes");

  std::vector<double> h(n - 1), delta(n - 1);
  for (int i = 0; i + 1 < n; ++i) {
    h[i] = xs_[i + 1] - xs_[i];
    if (h[i] <= 0.0) throw grid_error("MonotoneCubic: abscissae not increasing");
    delta[i] = (ys_[i + 1] - ys_[i]) / h[i];
  }

  slopes_.assign(n, 0.0);
  slopes_[0] = delta[0];
  slopes_[n - 1] = delta[n - 2];
  for (int i = 1; i + 1 < n; ++i) {
    if (delta[i - 1] * delta[i] <= 0.0) {
      slopes_[i] = 0.0;
    } else {
      // Weighted harmonic mean keeps the interpolant monotone.
      const double w1 = 2.0 * h[i] + h[i - 1];
      const double w2 = h[i] + 2.0 * h[i - 1];
      slopes_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
    }
  }
  // Clamp endpoint slopes (Fritsch-Carlson boundary treatment).
  for (int end = 0; end < 2; ++end) {
    const int i = (end == 0) ? 0 : n - 1;
    const double d = (end == 0) ? delta[0] : delta[n - 2];
    if (slopes_[i] * d <= 0.0) {
      slopes_[i] = 0.0;
    } else if (std::fabs(slopes_[i]) > 3.0 * std::fabs(d)) {
      slopes_[i] = 3.0 * d;
    }
  }
}

int MonotoneCubic::locate(double x) const {
  if (empty()) throw grid_error("MonotoneCubic: empty interpolant");
  return bracket_index(xs_, x);
}

double MonotoneCubic::operator()(double x) const {
  const int i = locate(x);
  const double h = xs_[i + 1] - xs_[i];
  const double t = (x - xs_[i]) / h;
  const double t2 = t * t;
  const double t3 = t2 * t;
  const double h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
  const double h10 = t3 - 2.0 * t2 + t;
  const double h01 = -2.0 * t3 + 3.0 * t2;
  const double h11 = t3 - t2;
  return h00 * ys_[i] + h10 * h * slopes_[i] + h01 * ys_[i + 1] + h11 * h * slopes_[i + 1];
}

double MonotoneCubic::derivative(double x) const {
  const int i = locate(x);
  const double h = xs_[i + 1] - xs_[i];
  const double t = (x - xs_[i]) / h;
  const double t2 = t * t;
  const double dh00 = (6.0 * t2 - 6.0 * t) / h;
  const double dh10 = 3.0 * t2 - 4.0 * t + 1.0;
  const double dh01 = (-6.0 * t2 + 6.0 * t) / h;
  const double dh11 = 3.0 * t2 - 2.0 * t;
  return dh00 * ys_[i] + dh10 * slopes_[i] + dh01 * ys_[i + 1] + dh11 * slopes_[i + 1];
}

}  // namespace dualflow
