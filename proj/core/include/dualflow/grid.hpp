#pragma once

#include <cmath>
#include <vector>

#include "dualflow/errors.hpp"

namespace dualflow {

/// Uniform time grid on [0, T]; the last node is exactly T.
struct TimeGrid {
  double horizon = 1.0;
  int n_steps = 1;

  TimeGrid() = default;
  TimeGrid(double horizon_, int n_steps_) : horizon(horizon_), n_steps(n_steps_) {
    if (!(horizon > 0.0) || n_steps < 1)
      throw domain_error("TimeGrid: horizon must be > 0 and n_steps >= 1");
  }

  double dt() const { return horizon / n_steps; }
  int n_times() const { return n_steps + 1; }
  double t(int i) const { return (i == n_steps) ? horizon : i * dt(); }
};

inline std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 2 || !(hi > lo)) throw domain_error("linspace: need n >= 2 and hi > lo");
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = lo + (hi - lo) * i / (n - 1);
  v.back() = hi;
  return v;
}

inline std::vector<double> logspace(double lo, double hi, int n) {
  if (!(lo > 0.0)) throw domain_error("logspace: lower bound must be > 0");
  auto v = linspace(std::log(lo), std::log(hi), n);
  for (auto& x : v) x = std::exp(x);
  v.front() = lo;
  v.back() = hi;
  return v;
}

}  // namespace dualflow
