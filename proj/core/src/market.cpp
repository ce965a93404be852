#include "dualflow/market.hpp"

#include <cmath>

#include "dualflow/errors.hpp"
#include "dualflow/parallel.hpp"
#include "dualflow/rng.hpp"

namespace dualflow {

namespace {

void require_market_inputs(double sigma, double s0, double horizon) {
  if (!(sigma > 0.0)) throw domain_error("MarketSpec: sigma must be > 0");
  if (!(s0 > 0.0)) throw domain_error("MarketSpec: s0 must be > 0");
  if (!(horizon > 0.0)) throw domain_error("MarketSpec: horizon must be > 0");
}

}  // namespace

MarketSpec MarketSpec::black_scholes(double mu, double sigma, double s0, double horizon) {
  require_market_inputs(sigma, s0, horizon);
  if (!std::isfinite(mu / sigma)) throw domain_error("MarketSpec: Sharpe ratio must be finite");
  MarketSpec m;
  m.kind_ = MarketKind::black_scholes;
  m.mu_ = mu;
  m.sigma_ = sigma;
  m.s0_ = s0;
  m.horizon_ = horizon;
  return m;
}

MarketSpec MarketSpec::markov_sharpe(std::function<double(double, double)> theta,
                                     double sigma, double s0, double horizon) {
  require_market_inputs(sigma, s0, horizon);
  if (!theta) throw domain_error("MarketSpec: null Sharpe function");
  MarketSpec m;
  m.kind_ = MarketKind::markov_sharpe;
  m.sigma_ = sigma;
  m.s0_ = s0;
  m.horizon_ = horizon;
  m.sharpe_fn_ = std::move(theta);
  return m;
}

MarketSpec MarketSpec::basis_risk(double theta0, double theta1, double kappa, double eta,
                                  double rho, double y0, double sigma, double s0,
                                  double horizon) {
  require_market_inputs(sigma, s0, horizon);
  if (!(std::fabs(rho) < 1.0))
    throw domain_error("MarketSpec: |rho| must be < 1 (otherwise the model is complete)");
  if (!(eta > 0.0) || !(kappa >= 0.0))
    throw domain_error("MarketSpec: factor vol must be > 0 and mean reversion >= 0");
  MarketSpec m;
  m.kind_ = MarketKind::basis_risk;
  m.sigma_ = sigma;
  m.s0_ = s0;
  m.horizon_ = horizon;
  BasisRiskParams p;
  p.theta0 = theta0;
  p.theta1 = theta1;
  p.kappa = kappa;
  p.eta = eta;
  p.rho = rho;
  p.y0 = y0;
  p.theta = [theta0, theta1](double y) { return theta0 + theta1 * std::tanh(y); };
  p.factor_drift = [kappa](double y) { return -kappa * y; };
  p.factor_vol = [eta](double) { return eta; };
  m.factor_ = std::move(p);
  return m;
}

double MarketSpec::mu() const {
  if (kind_ != MarketKind::black_scholes)
    throw capability_error("MarketSpec::mu: only for Black-Scholes");
  return mu_;
}

double MarketSpec::constant_sharpe() const {
  if (kind_ != MarketKind::black_scholes)
    throw capability_error("MarketSpec::constant_sharpe: only for Black-Scholes");
  return mu_ / sigma_;
}

const BasisRiskParams& MarketSpec::factor() const {
  if (!factor_) throw capability_error("MarketSpec::factor: only for the basis-risk variant");
  return *factor_;
}

double MarketSpec::sharpe(double t, double s, double y) const {
  switch (kind_) {
    case MarketKind::black_scholes:
      return mu_ / sigma_;
    case MarketKind::markov_sharpe:
      return sharpe_fn_(t, s);
    case MarketKind::basis_risk:
      return factor_->theta(y);
  }
  throw capability_error("MarketSpec::sharpe: unknown variant");
}

PathBundle simulate_paths(const MarketSpec& model, const TimeGrid& grid, int n_paths,
                          std::uint64_t seed, Measure measure, int threads) {
  if (n_paths < 1) throw domain_error("simulate_paths: n_paths must be >= 1");

  PathBundle b;
  b.grid = grid;
  b.n_paths = n_paths;
  b.measure = measure;
  b.seed = seed;
  b.market = model.kind();

  const int nt = grid.n_times();
  const int ns = grid.n_steps;
  const double dt = grid.dt();
  const double sqdt = std::sqrt(dt);
  const double sigma = model.sigma();
  const bool physical = (measure == Measure::physical);
  const bool basis = (model.kind() == MarketKind::basis_risk);

  b.s = Matrix(n_paths, nt);
  b.log_z = Matrix(n_paths, nt);
  b.dw = Matrix(n_paths, ns);
  if (basis) {
    b.factor = Matrix(n_paths, nt);
    b.dw_perp = Matrix(n_paths, ns);
  }

  const NormalField normals(seed);
  const double rho = basis ? model.factor().rho : 0.0;
  const double rho_perp = basis ? std::sqrt(1.0 - rho * rho) : 0.0;

  parallel_for(n_paths, threads, [&](std::int64_t p) {
    double s = model.s0();
    double logz = 0.0;
    double y = basis ? model.factor().y0 : 0.0;
    b.s(p, 0) = s;
    b.log_z(p, 0) = 0.0;
    if (basis) b.factor(p, 0) = y;

    for (int i = 0; i < ns; ++i) {
      const double t = grid.t(i);
      const double dw = sqdt * normals(p, i, 0);
      b.dw(p, i) = dw;
      const double theta = model.sharpe(t, s, y);

      switch (model.kind()) {
        case MarketKind::black_scholes: {
          const double drift = physical ? model.mu() : 0.0;
          s *= std::exp((drift - 0.5 * sigma * sigma) * dt + sigma * dw);
          break;
        }
        case MarketKind::markov_sharpe: {
          const double drift = physical ? sigma * theta : 0.0;
          s += s * (drift * dt + sigma * dw);
          break;
        }
        case MarketKind::basis_risk: {
          const double dwp = sqdt * normals(p, i, 1);
          b.dw_perp(p, i) = dwp;
          const auto& f = model.factor();
          const double a = f.factor_vol(y);
          // Under Q only the traded driver is shifted (minimal martingale
          // measure); the factor inherits the correlated part of the shift.
          const double y_drift =
              physical ? f.factor_drift(y) : f.factor_drift(y) - rho * a * theta;
          const double s_drift = physical ? sigma * theta : 0.0;
          s += s * (s_drift * dt + sigma * dw);
          y += y_drift * dt + a * (rho * dw + rho_perp * dwp);
          break;
        }
      }

      // log of E(-lambda . M) evaluated on the simulated path; under Q the
      // generated increments are W^Q = W + theta t.
      logz += physical ? (-theta * dw - 0.5 * theta * theta * dt)
                       : (-theta * dw + 0.5 * theta * theta * dt);

      b.s(p, i + 1) = s;
      b.log_z(p, i + 1) = logz;
      if (basis) b.factor(p, i + 1) = y;
    }
  });

  return b;
}

TerminalSample simulate_terminal(const MarketSpec& model, int n_steps, int n_paths,
                                 std::uint64_t seed, Measure measure, int threads) {
  if (n_paths < 1) throw domain_error("simulate_terminal: n_paths must be >= 1");
  if (n_steps < 1) throw domain_error("simulate_terminal: n_steps must be >= 1");

  TerminalSample out;
  out.horizon = model.horizon();
  out.n_paths = n_paths;
  out.measure = measure;
  out.s.resize(n_paths);
  out.log_z.resize(n_paths);
  out.w.resize(n_paths);
  const bool basis = (model.kind() == MarketKind::basis_risk);
  if (basis) out.factor.resize(n_paths);

  const NormalField normals(seed);
  const double T = model.horizon();
  const double sigma = model.sigma();
  const bool physical = (measure == Measure::physical);

  if (model.kind() == MarketKind::black_scholes) {
    // Exact lognormal terminal sampling: one draw per path.
    const double theta = model.constant_sharpe();
    const double drift = physical ? model.mu() : 0.0;
    parallel_for(n_paths, threads, [&](std::int64_t p) {
      const double w = std::sqrt(T) * normals(p, 0, 0);
      out.w[p] = w;
      out.s[p] = model.s0() * std::exp((drift - 0.5 * sigma * sigma) * T + sigma * w);
      out.log_z[p] = physical ? (-theta * w - 0.5 * theta * theta * T)
                              : (-theta * w + 0.5 * theta * theta * T);
    });
    return out;
  }

  const double dt = T / n_steps;
  const double sqdt = std::sqrt(dt);
  const double rho = basis ? model.factor().rho : 0.0;
  const double rho_perp = basis ? std::sqrt(1.0 - rho * rho) : 0.0;

  parallel_for(n_paths, threads, [&](std::int64_t p) {
    double s = model.s0();
    double logz = 0.0;
    double w_total = 0.0;
    double y = basis ? model.factor().y0 : 0.0;
    for (int i = 0; i < n_steps; ++i) {
      const double t = i * dt;
      const double dw = sqdt * normals(p, i, 0);
      w_total += dw;
      const double theta = model.sharpe(t, s, y);
      if (basis) {
        const double dwp = sqdt * normals(p, i, 1);
        const auto& f = model.factor();
        const double a = f.factor_vol(y);
        const double y_drift =
            physical ? f.factor_drift(y) : f.factor_drift(y) - rho * a * theta;
        const double s_drift = physical ? sigma * theta : 0.0;
        s += s * (s_drift * dt + sigma * dw);
        y += y_drift * dt + a * (rho * dw + rho_perp * dwp);
      } else {
        const double drift = physical ? sigma * theta : 0.0;
        s += s * (drift * dt + sigma * dw);
      }
      logz += physical ? (-theta * dw - 0.5 * theta * theta * dt)
                       : (-theta * dw + 0.5 * theta * theta * dt);
    }
    out.s[p] = s;
    out.log_z[p] = logz;
    out.w[p] = w_total;
    if (basis) out.factor[p] = y;
  });

  return out;
}

StructureDecomposition structure_decomposition(const MarketSpec& model,
                                               const PathBundle& paths) {
  if (paths.measure != Measure::physical)
    throw domain_error("structure_decomposition: paths must be simulated under P");

  const int np = paths.n_paths;
  const int ns = paths.grid.n_steps;
  const double dt = paths.grid.dt();
  const double sigma = model.sigma();
  const bool basis = (model.kind() == MarketKind::basis_risk);

  StructureDecomposition d;
  d.dm = Matrix(np, ns);
  d.lambda = Matrix(np, ns);
  d.d_qv = Matrix(np, ns);

  for (int p = 0; p < np; ++p) {
    for (int i = 0; i < ns; ++i) {
      const double s = paths.s(p, i);
      const double y = basis ? paths.factor(p, i) : 0.0;
      const double theta = model.sharpe(paths.grid.t(i), s, y);
      const double lambda = theta / (sigma * s);
      const double dqv = sigma * sigma * s * s * dt;
      const double ds = paths.s(p, i + 1) - s;
      d.lambda(p, i) = lambda;
      d.d_qv(p, i) = dqv;
      // dM is the remainder, so dS = dM + lambda d<M> holds exactly.
      d.dm(p, i) = ds - lambda * dqv;
    }
  }
  return d;
}

StatePriceDensity state_price_density(const MarketSpec& model, const PathBundle& paths) {
  if (!model.is_complete())
    throw capability_error(
        "state_price_density: basis-risk markets have no unique martingale density; "
        "the duality engine provides the minimal-entropy one");

  StatePriceDensity out;
  out.log_z = &paths.log_z;
  const int np = paths.n_paths;
  const int last = paths.grid.n_steps;
  double mean = 0.0, m2 = 0.0;
  for (int p = 0; p < np; ++p) {
    const double z = std::exp(paths.log_z(p, last));
    const double delta = z - mean;
    mean += delta / (p + 1);
    m2 += delta * (z - mean);
  }
  out.mean_z_terminal = mean;
  out.se_z_terminal = (np > 1) ? std::sqrt(m2 / (np - 1) / np) : 0.0;
  return out;
}

MartingaleReport empirical_martingale_test(const Matrix& values,
                                           std::span<const double> weights,
                                           std::span<const std::pair<int, int>> pairs) {
  const int np = static_cast<int>(values.rows());
  const int nt = static_cast<int>(values.cols());
  if (np < 2 || nt < 2) throw domain_error("empirical_martingale_test: need >= 2 paths and times");
  if (!weights.empty()) {
    if (static_cast<int>(weights.size()) != np)
      throw domain_error("empirical_martingale_test: weights size must match path count");
    for (double w : weights)
      if (!(w > 0.0)) throw domain_error("empirical_martingale_test: weights must be positive");
  }

  std::vector<std::pair<int, int>> selected(pairs.begin(), pairs.end());
  if (selected.empty()) {
    // Default: consecutive coarse nodes plus the full span.
    const int chunks = std::min(8, nt - 1);
    std::vector<int> nodes;
    for (int k = 0; k <= chunks; ++k) nodes.push_back(k * (nt - 1) / chunks);
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k)
      if (nodes[k] < nodes[k + 1]) selected.emplace_back(nodes[k], nodes[k + 1]);
    selected.emplace_back(0, nt - 1);
  }

  MartingaleReport rep;
  rep.pass = true;
  for (auto [i0, i1] : selected) {
    if (i0 < 0 || i1 >= nt || i0 >= i1)
      throw domain_error("empirical_martingale_test: bad time pair");
    double mean = 0.0, m2 = 0.0;
    for (int p = 0; p < np; ++p) {
      const double w = weights.empty() ? 1.0 : weights[p];
      const double v = w * (values(p, i1) - values(p, i0));
      const double delta = v - mean;
      mean += delta / (p + 1);
      m2 += delta * (v - mean);
    }
    MartingalePairStat s;
    s.i0 = i0;
    s.i1 = i1;
    s.stat = mean;
    s.se = std::sqrt(m2 / (np - 1) / np);
    s.pass = (s.se > 0.0) ? (std::fabs(s.stat) <= 3.0 * s.se) : (s.stat == 0.0);
    if (s.se > 0.0) rep.worst_ratio = std::max(rep.worst_ratio, std::fabs(s.stat) / s.se);
    rep.pass = rep.pass && s.pass;
    rep.pairs.push_back(s);
  }
  return rep;
}

}  // namespace dualflow
