#pragma once

#include <memory>
#include <vector>

#include "dualflow/interp.hpp"
#include "dualflow/market.hpp"
#include "dualflow/matrix.hpp"

namespace dualflow {

/// Basis-risk machinery for exponential utility. The value function
/// factorizes as V(t, x, eta) = -exp(-gamma x) F(t, eta) where eta is the
/// factor state. F is computed two independent ways:
///
///   linear route:    the power transform F = G^(1/(1-rho^2)) with G
///                    solving the linear PDE
///                    G_t + a^2/2 G_ee + (b - rho theta a) G_e
///                      - (1-rho^2) theta^2/2 G = 0,  G(T,.) = 1;
///   nonlinear route: the reduced semilinear PDE for F itself,
///                    F_t + a^2/2 F_ee + (b - rho theta a) F_e
///                      - theta^2/2 F - rho^2 a^2 F_e^2 / (2F) = 0.
///
/// Disagreement between the routes bounds the trust in either.
enum class DistortionRoute { linear, nonlinear };

class DistortionSolve {
 public:
  DistortionSolve(const MarketSpec& model, DistortionRoute route, int n_t_steps,
                  int n_eta, double eta_span);

  DistortionRoute route() const { return route_; }
  const std::vector<double>& t_nodes() const { return t_; }
  const std::vector<double>& eta_nodes() const { return eta_; }
  const Matrix& f_grid() const { return f_; }  // (time, eta)

  double f(double t, double eta) const;
  double f_eta(double t, double eta) const;

  /// Remaining-entropy field H(t, eta) = -ln F; H >= 0 and decays to zero
  /// at the horizon.
  double entropy(double t, double eta) const;
  /// H(0, y0): the minimal relative entropy entering the static dual value.
  double entropy0() const;

  /// Orthogonal drift of the minimal-entropy density:
  /// nu(t, eta) = -sqrt(1-rho^2) a(eta) F_eta/F.
  double memm_orthogonal_drift(double t, double eta) const;

 private:
  int locate_time(double t) const;

  MarketSpec model_;
  DistortionRoute route_;
  std::vector<double> t_;
  std::vector<double> eta_;
  Matrix f_;  // (time, eta)
};

/// Minimal-entropy density along simulated physical-measure paths:
/// log Z* accumulates -theta dW - nu dW_perp - (theta^2 + nu^2)/2 dt.
std::vector<double> memm_log_density_terminal(const MarketSpec& model,
                                              const DistortionSolve& solve,
                                              const PathBundle& paths);

}  // namespace dualflow
