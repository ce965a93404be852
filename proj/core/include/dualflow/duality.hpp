#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dualflow/interp.hpp"
#include "dualflow/market.hpp"
#include "dualflow/matrix.hpp"
#include "dualflow/quadrature.hpp"
#include "dualflow/utility.hpp"

namespace dualflow {

/// Tabulated conjugate ladder over log marginal-utility values. The table
/// stores x*(ln z) once (one root-find per node); every Utilde quantity is
/// then recovered from exact U-derivatives at the interpolated maximizer.
/// The envelope theorem makes Utilde itself second-order insensitive to
/// interpolation error in x*.
class ConjugateTable {
 public:
  ConjugateTable(const UtilitySpec& u, double ln_z_min, double ln_z_max, int n = 4096);

  double maximizer(double z) const;  // x*(z), U'(x*) = z
  double value(double z) const;      // Utilde(z)
  double d1(double z) const;         // -x*
  double d2(double z) const;         // -1/U''(x*)
  double d3(double z) const;         // U'''(x*)/U''(x*)^3

  const UtilitySpec& utility() const { return u_; }

 private:
  UtilitySpec u_;
  MonotoneCubic x_of_lnz_;
};

/// Dual value curve for a constant-Sharpe complete market over the
/// remaining horizon: Vtilde(y; v) = E[Utilde(y Z)] with
/// ln Z ~ N(-v/2, v), v = theta^2 (T - t). All derivatives are exact
/// quadrature expressions, not finite differences.
class DualCurve {
 public:
  DualCurve(std::shared_ptr<const ConjugateTable> table,
            std::shared_ptr<const GaussHermite> quad);

  double value(double y, double v) const;  // E Utilde(yZ)
  double d1(double y, double v) const;     // E Z Utilde'(yZ)
  double d2(double y, double v) const;     // E Z^2 Utilde''(yZ)
  double d3(double y, double v) const;     // E Z^3 Utilde'''(yZ)

  /// Solve d1(y, v) = -x for y (the conjugacy map y = V'(t, x)).
  double y_of_x(double x, double v, std::optional<double> warm_start = {}) const;
  /// x(y) = -Vtilde'(t, y).
  double x_of_y(double y, double v) const { return -d1(y, v); }

  const ConjugateTable& table() const { return *table_; }

 private:
  std::shared_ptr<const ConjugateTable> table_;
  std::shared_ptr<const GaussHermite> quad_;
};

struct McParams {
  int n_paths = 100000;
  std::uint64_t seed = 42;
  int n_steps = 64;  // Euler steps for non-lognormal models
  int threads = 1;
};

struct DualValue {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo value of the dual objective E[Utilde(y Z_T)].
DualValue dual_value(const UtilitySpec& u, const MarketSpec& model, double y,
                     const McParams& mc = {});

struct StaticSolution {
  double x = 0.0;
  double y_star = 0.0;  // V'(x)
  double v = 0.0;       // V(x) = Vtilde(y*) + x y*
  double v_tilde = 0.0; // Vtilde(y*)
  double v_xx = 0.0;    // V''(x) = -1/Vtilde''(y*)
  double v_xxx = 0.0;   // V'''(x) = -Vtilde'''(y*)/Vtilde''(y*)^3
  double mc_value = 0.0;      // Monte Carlo cross-check of V(x)
  double mc_std_error = 0.0;
};

/// Dual-first static solve: minimize Vtilde(y) + x y over y > 0. The value
/// function is never touched by strategy-space search. Quadrature-backed
/// for constant-Sharpe models (with a Monte Carlo cross-check), closed form
/// for exponential utility under basis risk.
StaticSolution static_solve(const UtilitySpec& u, const MarketSpec& model, double x,
                            const McParams& mc = {});

/// Pathwise optimal terminal wealth X_T = -Utilde'(y* Z_T). Satisfies
/// U'(X_T) = y* Z_T to root-finding accuracy on every path.
std::vector<double> optimal_terminal_wealth(const UtilitySpec& u, double y_star,
                                            std::span<const double> z_terminal,
                                            int threads = 1);

struct DerivativeFlowReport {
  std::vector<double> x_prime;   // X_T'(x) per path
  std::vector<double> x_second;  // X_T''(x) per path
  double x_prime_min = 0.0, x_prime_max = 0.0;
  double bound_lo = 0.0, bound_hi = 0.0;  // c1/c2, c2/c1
  bool containment_pass = false;
  double q_mean_x_prime = 0.0, q_se_x_prime = 0.0;    // E^Q X' vs 1
  double q_mean_x_second = 0.0, q_se_x_second = 0.0;  // E^Q X'' vs 0
  bool q_first_moment_pass = false;
  bool q_second_moment_pass = false;
  double v3_over_v2 = 0.0;  // V'''/V'' recovered as a Q-average
};

/// Terminal derivative flows X_T', X_T'' from the marginal-utility
/// transport, with the two-sided risk-aversion containment and the
/// Q-moment identities. Requires rav1 bounds (c1, c2); absent bounds are a
/// precondition failure.
DerivativeFlowReport derivative_flows(const UtilitySpec& u, const StaticSolution& sol,
                                      std::span<const double> z_terminal,
                                      std::optional<std::pair<double, double>> rav_bounds,
                                      int threads = 1);

/// Optimal wealth and strategy as a flow over initial capital, carried
/// along a simulated path bundle. Exponential utility uses the affine
/// closed form (X' is exactly one); other utilities ride a transport-table
/// route built from the dual curve. Constant-Sharpe complete models only.
struct WealthPoint {
  double wealth = 0.0;
  double strategy = 0.0;
  double wealth_x = 0.0;   // dX/dx
  double wealth_xx = 0.0;  // d2X/dx2
  double strategy_x = 0.0; // dpi/dx
};

class WealthFlow {
 public:
  WealthFlow(const UtilitySpec& u, const MarketSpec& model, std::vector<double> x_grid,
             std::shared_ptr<const PathBundle> paths, int quad_nodes = 160);

  const std::vector<double>& x_grid() const { return x_grid_; }
  const PathBundle& paths() const { return *paths_; }
  const MarketSpec& model() const { return model_; }
  const UtilitySpec& utility() const { return utility_; }
  bool exponential_closed_form() const { return closed_form_; }

  WealthPoint eval_grid(int path, int t_idx, int x_idx) const;
  WealthPoint eval(int path, int t_idx, double x) const;
  /// Evaluation keyed by the time-zero marginal value y0 = V'(0, x); lets
  /// callers hoist the x -> y0 solve out of per-path loops.
  WealthPoint eval_from_marginal(int path, int t_idx, double y0) const;
  double wealth_grid(int path, int t_idx, int x_idx) const;

  /// Adapted inverse by the analytic route (closed form or table); the
  /// grid-based bisection inverse lives in the inverse-flow module.
  double invert(int path, int t_idx, double target) const;

  double y_of_grid_x(int x_idx) const { return y_grid_[x_idx]; }
  double y_of_x(double x) const;
  double x_of_y(double y) const;

  /// Marginal-value state V'(t, X_t(x)) = y(x) Z_t along the path.
  double marginal_state(int path, int t_idx, double x) const;

  /// Static value V(x) by the dual route.
  double value_at(double x) const;

 private:
  UtilitySpec utility_;
  MarketSpec model_;
  std::vector<double> x_grid_;
  std::shared_ptr<const PathBundle> paths_;
  bool closed_form_ = false;

  std::vector<double> y_grid_;  // y(x_i) = V'(0, x_i)
  std::vector<double> y_xx_;    // V''(0, x_i)
  std::vector<double> y_xxx_;   // V'''(0, x_i)

  std::shared_ptr<const ConjugateTable> table_;
  std::shared_ptr<const GaussHermite> quad_;
  std::shared_ptr<const DualCurve> curve_;

  // Transport tables per time node over ln z: G = E^Q[-Utilde'(z Z)],
  // and its first two z-derivatives.
  struct TransportSlice;
  std::shared_ptr<const std::vector<TransportSlice>> slices_;
};

/// Deterministic dynamic value fields for constant-Sharpe complete models.
/// The dual field is quadrature-exact; the primal field is produced from it
/// by pointwise conjugacy inversion, never by strategy search.
struct ValueField {
  std::vector<double> t;
  std::vector<double> x;
  Matrix v, v_x, v_xx;  // (time, x); derivative matrices are analytic ladders
};

struct DualValueField {
  std::vector<double> t;
  std::vector<double> y;
  Matrix v, v_y, v_yy;  // (time, y)
};

struct FieldBundle {
  ValueField primal;
  DualValueField dual;
};

FieldBundle dynamic_fields(const UtilitySpec& u, const MarketSpec& model,
                           std::span<const double> t_nodes, std::span<const double> x_nodes,
                           std::span<const double> y_nodes, int quad_nodes = 200,
                           int threads = 1);

/// Conditional problem restarted at grid time tau with wealth x: the
/// optimal wealth from tau on is the basic flow composed with the adapted
/// inverse, X_s(tau, x) = X_s(psi_tau(x)).
struct ConditionalSolution {
  int tau_idx = 0;
  double x = 0.0;
  std::vector<double> xi;  // psi_tau(x) per path
  Matrix wealth;           // (path, time node from tau..T inclusive)
  Matrix strategy;         // (path, step in [tau, T))
};

ConditionalSolution conditional_solution(const WealthFlow& flow,
                                         std::span<const double> psi_tau, int tau_idx,
                                         double x);

struct ConditionalCheck {
  double duality_residual_max = 0.0;   // |U'(X_T(tau,x)) - Z_T(Z_tau^{-1}(y))|
  double mart_worst_ratio = 0.0;       // drift of Z(Z_tau^-1(y)) X(X_tau^-1(x))
  bool mart_pass = false;
  double density_norm_mean = 0.0;      // E[Z_T/Z_tau] vs 1
  double density_norm_se = 0.0;
  bool density_norm_pass = false;
  double value_mc = 0.0;               // MC mean of U(X_T(tau,x))
  double value_mc_se = 0.0;
  double value_field = 0.0;            // V(tau, x)
  bool value_pass = false;
};

ConditionalCheck conditional_checks(const WealthFlow& flow, const ConditionalSolution& cs,
                                    double v_tau_x, double y_tau_x);

struct SuboptimalityProbe {
  std::vector<double> scales;
  std::vector<double> values;      // MC value per scaled strategy
  std::vector<double> std_errors;
  double reference_value = 0.0;    // V(x)
  bool pass = false;               // every value <= V(x) + 3 SE
};

/// Value of the scaled strategies c * pi along simulated paths; the
/// optimality principle leaves c = 1 as the only non-dominated point.
SuboptimalityProbe suboptimality_probe(const WealthFlow& flow, double x,
                                       std::span<const double> scales);

}  // namespace dualflow
