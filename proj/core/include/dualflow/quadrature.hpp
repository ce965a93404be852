#pragma once

#include <functional>
#include <vector>

namespace dualflow {

/// Gauss-Hermite rule for weight exp(-x^2) on the real line.
/// expect(f) integrates f against the standard normal density:
///   E[f(xi)] with xi ~ N(0,1)  ==  (1/sqrt(pi)) * sum w_i f(sqrt(2) x_i).
class GaussHermite {
 public:
  explicit GaussHermite(int n);

  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }

  /// Standard normal abscissa for node i: sqrt(2) * x_i.
  double normal_node(int i) const;
  /// Probability weight for node i: w_i / sqrt(pi); sums to 1.
  double normal_weight(int i) const;

  double expect(const std::function<double(double)>& f) const;

  /// E[f(exp(m + s*xi))] for xi ~ N(0,1) (lognormal functional).
  double expect_lognormal(double m, double s,
                          const std::function<double(double)>& f) const;

 private:
  std::vector<double> nodes_;    // roots of H_n, ascending
  std::vector<double> weights_;  // Gauss-Hermite weights for exp(-x^2)
};

}  // namespace dualflow
