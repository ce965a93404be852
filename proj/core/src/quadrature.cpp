#include "dualflow/quadrature.hpp"

#include <cmath>

#include "dualflow/errors.hpp"

namespace dualflow {

namespace {

constexpr double kSqrtPi = 1.7724538509055160273;

// Orthonormal Hermite recurrence value and derivative at x.
// p_{j+1} = x*sqrt(2/(j+1))*p_j - sqrt(j/(j+1))*p_{j-1}, stable for large n.
struct HermiteEval {
  double p;       // p_n(x)
  double p_prev;  // p_{n-1}(x)
};

HermiteEval hermite_orthonormal(int n, double x) {
  double p1 = 1.0 / std::sqrt(kSqrtPi);  // p_0
  double p2 = 0.0;
  for (int j = 0; j < n; ++j) {
    const double p3 = p2;
    p2 = p1;
    p1 = x * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
  }
  return {p1, p2};
}

}  // namespace

GaussHermite::GaussHermite(int n) {
  if (n < 1) throw domain_error("GaussHermite: order must be >= 1");
  nodes_.assign(n, 0.0);
  weights_.assign(n, 0.0);

  // Scan inward from beyond the largest root with steps below half the
  // local WKB spacing pi/sqrt(2n+1-x^2); every sign change brackets exactly
  // one root. Bisection then a Newton polish give full precision. This is
  // guess-free and stays robust for n in the hundreds.
  const double radius = std::sqrt(2.0 * n + 1.0);
  const int half = n / 2;
  const bool odd = (n % 2 != 0);

  double x_hi = radius + 2.0;
  double p_hi = hermite_orthonormal(n, x_hi).p;  // > 0 (leading coeff > 0)
  int found = 0;
  while (found < half) {
    const double gap2 = std::max(2.0 * n + 1.0 - x_hi * x_hi, 40.0);
    double x_lo = x_hi - 0.5 * M_PI / std::sqrt(gap2);
    double p_lo = hermite_orthonormal(n, x_lo).p;
    if (p_lo == 0.0 || (p_lo > 0.0) != (p_hi > 0.0)) {
      // Bracketed: bisect, then polish.
      double a = x_lo, b = x_hi, pa = p_lo;
      for (int it = 0; it < 200 && b - a > 1e-16 * (1.0 + b); ++it) {
        const double m = 0.5 * (a + b);
        const double pm = hermite_orthonormal(n, m).p;
        if (pm == 0.0) { a = b = m; break; }
        if ((pm > 0.0) == (pa > 0.0)) { a = m; pa = pm; } else { b = m; }
      }
      double z = 0.5 * (a + b);
      for (int it = 0; it < 4; ++it) {
        const auto h = hermite_orthonormal(n, z);
        const double deriv = std::sqrt(2.0 * n) * h.p_prev;
        const double step = h.p / deriv;
        if (!std::isfinite(step)) break;
        const double z_next = z - step;
        if (z_next <= x_lo || z_next >= x_hi) break;
        z = z_next;
      }
      const auto h = hermite_orthonormal(n, z);
      const double deriv = std::sqrt(2.0 * n) * h.p_prev;
      nodes_[n - 1 - found] = z;
      nodes_[found] = -z;
      weights_[n - 1 - found] = 2.0 / (deriv * deriv);
      weights_[found] = weights_[n - 1 - found];
      ++found;
    }
    x_hi = x_lo;
    p_hi = p_lo;
    if (x_hi < 0.0) throw numerics_error("GaussHermite: root scan failed");
  }

  if (odd) {
    // The middle root of an odd-order rule is exactly zero.
    const auto h = hermite_orthonormal(n, 0.0);
    const double deriv = std::sqrt(2.0 * n) * h.p_prev;
    nodes_[half] = 0.0;
    weights_[half] = 2.0 / (deriv * deriv);
  }
}

double GaussHermite::normal_node(int i) const { return std::sqrt(2.0) * nodes_[i]; }

double GaussHermite::normal_weight(int i) const { return weights_[i] / kSqrtPi; }

double GaussHermite::expect(const std::function<double(double)>& f) const {
  double acc = 0.0;
  for (int i = 0; i < size(); ++i) acc += normal_weight(i) * f(normal_node(i));
  return acc;
}

double GaussHermite::expect_lognormal(double m, double s,
                                      const std::function<double(double)>& f) const {
  double acc = 0.0;
  for (int i = 0; i < size(); ++i) {
    acc += normal_weight(i) * f(std::exp(m + s * normal_node(i)));
  }
  return acc;
}

}  // namespace dualflow
