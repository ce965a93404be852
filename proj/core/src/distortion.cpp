#include "dualflow/distortion.hpp"

#include <cmath>

#include "dualflow/errors.hpp"

namespace dualflow {

namespace {

// Solve a tridiagonal system in place (Thomas algorithm).
void solve_tridiagonal(std::vector<double>& lower, std::vector<double>& diag,
                       std::vector<double>& upper, std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = lower[i] / diag[i - 1];
    diag[i] -= m * upper[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

// Four-point Lagrange interpolation on a uniform grid; returns value and
// first derivative at xq.
struct Lagrange4 {
  double value = 0.0;
  double deriv = 0.0;
};

Lagrange4 lagrange4(std::span<const double> xs, std::span<const double> ys, double xq) {
  const int n = static_cast<int>(xs.size());
  if (n < 4) throw grid_error("lagrange4: need at least 4 nodes");
  if (xq < xs.front() || xq > xs.back()) throw grid_error("lagrange4: query outside grid");
  const double h = xs[1] - xs[0];
  int i = static_cast<int>((xq - xs.front()) / h) - 1;
  i = std::max(0, std::min(i, n - 4));

  Lagrange4 out;
  for (int k = 0; k < 4; ++k) {
    double lk = 1.0, dlk = 0.0;
    for (int m = 0; m < 4; ++m) {
      if (m == k) continue;
      lk *= (xq - xs[i + m]) / (xs[i + k] - xs[i + m]);
      double term = 1.0 / (xs[i + k] - xs[i + m]);
      for (int r = 0; r < 4; ++r) {
        if (r == k || r == m) continue;
        term *= (xq - xs[i + r]) / (xs[i + k] - xs[i + r]);
      }
      dlk += term;
    }
    out.value += ys[i + k] * lk;
    out.deriv += ys[i + k] * dlk;
  }
  return out;
}

}  // namespace

DistortionSolve::DistortionSolve(const MarketSpec& model, DistortionRoute route,
                                 int n_t_steps, int n_eta, double eta_span)
    : model_(model), route_(route) {
  if (model.kind() != MarketKind::basis_risk)
    throw capability_error("DistortionSolve: basis-risk variant required");
  if (n_t_steps < 2 || n_eta < 8)
    throw domain_error("DistortionSolve: grid too small");

  const auto& p = model.factor();
  const double rho = p.rho;
  const double rho2 = rho * rho;
  const double delta = 1.0 / (1.0 - rho2);

  t_ = linspace(0.0, model.horizon(), n_t_steps + 1);
  eta_ = linspace(p.y0 - eta_span, p.y0 + eta_span, n_eta);
  const double de = eta_[1] - eta_[0];
  const double dt = model.horizon() / n_t_steps;

  // March the terminal-value problem backward with Crank-Nicolson; the
  // nonlinear route treats its quotient term by two Picard sweeps.
  f_ = Matrix(n_t_steps + 1, n_eta, 1.0);
  std::vector<double> cur(n_eta, 1.0), nxt(n_eta, 1.0);

  const bool linear = (route == DistortionRoute::linear);

  auto reaction = [&](double eta) {
    const double th = p.theta(eta);
    return linear ? -0.5 * (1.0 - rho2) * th * th : -0.5 * th * th;
  };
  auto convection = [&](double eta) {
    return p.factor_drift(eta) - rho * p.theta(eta) * p.factor_vol(eta);
  };
  auto diffusion = [&](double eta) {
    const double a = p.factor_vol(eta);
    return 0.5 * a * a;
  };

  for (int k = n_t_steps - 1; k >= 0; --k) {
    // Picard iterations on the nonlinear source (zero for the linear route).
    std::vector<double> guess = nxt;
    for (int sweep = 0; sweep < (linear ? 1 : 2); ++sweep) {
      std::vector<double> lo(n_eta, 0.0), di(n_eta, 0.0), up(n_eta, 0.0), rhs(n_eta, 0.0);
      for (int j = 0; j < n_eta; ++j) {
        if (j == 0 || j == n_eta - 1) {
          // Neumann boundary: zero slope.
          di[j] = 1.0;
          if (j == 0) up[j] = -1.0; else lo[j] = -1.0;
          rhs[j] = 0.0;
          continue;
        }
        const double D = diffusion(eta_[j]);
        const double C = convection(eta_[j]);
        const double R = reaction(eta_[j]);
        const double a_lo = D / (de * de) - C / (2 * de);
        const double a_di = -2.0 * D / (de * de) + R;
        const double a_up = D / (de * de) + C / (2 * de);

        // (I - dt/2 L) F_k = (I + dt/2 L) F_{k+1} + dt * N(mid)
        lo[j] = -0.5 * dt * a_lo;
        di[j] = 1.0 - 0.5 * dt * a_di;
        up[j] = -0.5 * dt * a_up;
        rhs[j] = nxt[j] + 0.5 * dt * (a_lo * nxt[j - 1] + a_di * nxt[j] + a_up * nxt[j + 1]);

        if (!linear) {
          const auto nl = [&](const std::vector<double>& f) {
            const double fe = (f[j + 1] - f[j - 1]) / (2 * de);
            const double a = p.factor_vol(eta_[j]);
            return -0.5 * rho2 * a * a * fe * fe / f[j];
          };
          rhs[j] += 0.5 * dt * (nl(nxt) + nl(guess));
        }
      }
      solve_tridiagonal(lo, di, up, rhs);
      guess = rhs;
    }
    cur = guess;
    for (int j = 0; j < n_eta; ++j) f_(k, j) = cur[j];
    nxt = cur;
  }

  if (linear) {
    // Stored grid is F = G^delta on both routes.
    for (auto& v : f_.data()) v = std::pow(v, delta);
  }

  for (double v : f_.data())
    if (!(v > 0.0) || !std::isfinite(v))
      throw numerics_error("DistortionSolve: non-positive distortion value");
}

int DistortionSolve::locate_time(double t) const {
  const double T = model_.horizon();
  if (t < 0.0 || t > T) throw grid_error("DistortionSolve: time outside [0, T]");
  const double dt = t_[1] - t_[0];
  int k = static_cast<int>(t / dt);
  return std::min(k, static_cast<int>(t_.size()) - 2);
}

double DistortionSolve::f(double t, double eta) const {
  const int k = locate_time(t);
  const double w = (t - t_[k]) / (t_[k + 1] - t_[k]);
  const double f0 = lagrange4(eta_, f_.row(k), eta).value;
  const double f1 = lagrange4(eta_, f_.row(k + 1), eta).value;
  return (1.0 - w) * f0 + w * f1;
}

double DistortionSolve::f_eta(double t, double eta) const {
  const int k = locate_time(t);
  const double w = (t - t_[k]) / (t_[k + 1] - t_[k]);
  const double d0 = lagrange4(eta_, f_.row(k), eta).deriv;
  const double d1 = lagrange4(eta_, f_.row(k + 1), eta).deriv;
  return (1.0 - w) * d0 + w * d1;
}

double DistortionSolve::entropy(double t, double eta) const { return -std::log(f(t, eta)); }

double DistortionSolve::entropy0() const { return entropy(0.0, model_.factor().y0); }

double DistortionSolve::memm_orthogonal_drift(double t, double eta) const {
  const auto& p = model_.factor();
  const double rho = p.rho;
  return -std::sqrt(1.0 - rho * rho) * p.factor_vol(eta) * f_eta(t, eta) / f(t, eta);
}

std::vector<double> memm_log_density_terminal(const MarketSpec& model,
                                              const DistortionSolve& solve,
                                              const PathBundle& paths) {
  if (model.kind() != MarketKind::basis_risk)
    throw capability_error("memm_log_density_terminal: basis-risk variant required");
  if (paths.measure != Measure::physical)
    throw domain_error("memm_log_density_terminal: paths must be under P");

  const auto& p = model.factor();
  const int np = paths.n_paths;
  const int ns = paths.grid.n_steps;
  const double dt = paths.grid.dt();

  std::vector<double> log_z(np, 0.0);
  for (int pi = 0; pi < np; ++pi) {
    double acc = 0.0;
    for (int i = 0; i < ns; ++i) {
      const double eta = paths.factor(pi, i);
      const double th = p.theta(eta);
      const double nu = solve.memm_orthogonal_drift(paths.grid.t(i), eta);
      acc += -th * paths.dw(pi, i) - nu * paths.dw_perp(pi, i) -
             0.5 * (th * th + nu * nu) * dt;
    }
    log_z[pi] = acc;
  }
  return log_z;
}

}  // namespace dualflow
