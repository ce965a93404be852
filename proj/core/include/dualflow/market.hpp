#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dualflow/grid.hpp"
#include "dualflow/matrix.hpp"

namespace dualflow {

enum class Measure { physical, risk_neutral };  // P or Q

enum class MarketKind { black_scholes, markov_sharpe, basis_risk };

struct BasisRiskParams {
  // Sharpe ratio theta(y), factor drift b(y) and vol a(y); defaults give a
  // bounded Sharpe on an ergodic OU factor.
  std::function<double(double)> theta;
  std::function<double(double)> factor_drift;
  std::function<double(double)> factor_vol;
  double rho = 0.9;
  double y0 = 0.0;
  double theta0 = 0.5, theta1 = 0.1, kappa = 1.0, eta = 0.5;
};

/// One risky asset, continuous filtration. Complete variants (Black-Scholes
/// and Markov Sharpe) carry the unique martingale density; the basis-risk
/// variant adds an imperfectly correlated factor and is incomplete.
class MarketSpec {
 public:
  static MarketSpec black_scholes(double mu, double sigma, double s0, double horizon);
  static MarketSpec markov_sharpe(std::function<double(double, double)> theta,
                                  double sigma, double s0, double horizon);
  static MarketSpec basis_risk(double theta0, double theta1, double kappa, double eta,
                               double rho, double y0, double sigma, double s0,
                               double horizon);

  MarketKind kind() const { return kind_; }
  bool is_complete() const { return kind_ != MarketKind::basis_risk; }
  bool has_constant_sharpe() const { return kind_ == MarketKind::black_scholes; }

  double horizon() const { return horizon_; }
  double sigma() const { return sigma_; }
  double s0() const { return s0_; }
  double mu() const;                    // Black-Scholes only
  double constant_sharpe() const;       // Black-Scholes only: mu/sigma
  const BasisRiskParams& factor() const;

  /// Sharpe ratio at (t, s, y); the unused coordinates are ignored.
  double sharpe(double t, double s, double y) const;

 private:
  MarketSpec() = default;

  MarketKind kind_ = MarketKind::black_scholes;
  double horizon_ = 1.0;
  double mu_ = 0.0;
  double sigma_ = 0.2;
  double s0_ = 1.0;
  std::function<double(double, double)> sharpe_fn_;
  std::optional<BasisRiskParams> factor_;
};

/// Simulated ensemble on a time grid. Matrices are (path, time); increment
/// matrices are (path, step). log_z accumulates the density of the
/// martingale measure used for the simulation (the minimal-martingale one
/// for the incomplete variant). Identical (seed, grid, n_paths) give
/// bit-identical bundles for any thread count.
struct PathBundle {
  TimeGrid grid;
  int n_paths = 0;
  Measure measure = Measure::physical;
  std::uint64_t seed = 0;
  MarketKind market = MarketKind::black_scholes;

  Matrix s;        // asset levels
  Matrix log_z;    // log density process, log Z_0 = 0
  Matrix dw;       // asset Brownian increments (path, step)
  Matrix factor;   // basis-risk factor Y (empty otherwise)
  Matrix dw_perp;  // orthogonal increments (empty otherwise)
};

/// Terminal-only sample for large-path statics (no per-time storage).
struct TerminalSample {
  double horizon = 0.0;
  int n_paths = 0;
  Measure measure = Measure::physical;
  std::vector<double> s;
  std::vector<double> log_z;
  std::vector<double> w;  // terminal Brownian value of the asset driver
  std::vector<double> factor;
};

PathBundle simulate_paths(const MarketSpec& model, const TimeGrid& grid, int n_paths,
                          std::uint64_t seed, Measure measure, int threads = 1);

TerminalSample simulate_terminal(const MarketSpec& model, int n_steps, int n_paths,
                                 std::uint64_t seed, Measure measure, int threads = 1);

/// S = M + integral of lambda d<M>. Increments are constructed so the
/// identity dS = dM + lambda d<M> holds exactly on the grid.
struct StructureDecomposition {
  Matrix dm;      // (path, step) martingale increments
  Matrix lambda;  // (path, step) lambda = theta/(sigma S)
  Matrix d_qv;    // (path, step) d<M> = sigma^2 S^2 dt
};

StructureDecomposition structure_decomposition(const MarketSpec& model,
                                               const PathBundle& paths);

/// log Z for the unique martingale measure of a complete model, with the
/// E[Z_T] = 1 sample diagnostic. Throws capability_error for basis risk
/// (no unique density; the dual engine owns the minimal-entropy one).
struct StatePriceDensity {
  const Matrix* log_z = nullptr;
  double mean_z_terminal = 0.0;
  double se_z_terminal = 0.0;
};

StatePriceDensity state_price_density(const MarketSpec& model, const PathBundle& paths);

/// Zero-drift test for a sampled process: for selected time pairs t' < t,
/// the statistic mean(w * (V_t - V_t')) must sit within 3 standard errors
/// of zero.
struct MartingalePairStat {
  int i0 = 0, i1 = 0;
  double stat = 0.0;
  double se = 0.0;
  bool pass = false;
};

struct MartingaleReport {
  std::vector<MartingalePairStat> pairs;
  bool pass = false;
  double worst_ratio = 0.0;  // max |stat| / se
};

MartingaleReport empirical_martingale_test(const Matrix& values,
                                           std::span<const double> weights = {},
                                           std::span<const std::pair<int, int>> pairs = {});

}  // namespace dualflow
