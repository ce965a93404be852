#include "dualflow/duality.hpp"

#include <cmath>

#include "dualflow/distortion.hpp"
#include "dualflow/errors.hpp"
#include "dualflow/parallel.hpp"

namespace dualflow {

namespace {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(std::span<const double> v) {
  double mean = 0.0, m2 = 0.0;
  int n = 0;
  for (double x : v) {
    ++n;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  return {mean, (n > 1) ? std::sqrt(m2 / (n - 1) / n) : 0.0};
}

double require_constant_sharpe(const MarketSpec& model, const char* where) {
  if (!model.has_constant_sharpe())
    throw capability_error(std::string(where) +
                           ": constant-Sharpe complete market required");
  return model.constant_sharpe();
}

// ln z range wide enough for the y range convolved with the lognormal
// quadrature spread.
struct LnzRange {
  double lo, hi;
};

LnzRange table_range(double y_lo, double y_hi, double total_var, const GaussHermite& gh) {
  const double spread =
      std::sqrt(std::max(total_var, 0.0)) * std::fabs(gh.normal_node(gh.size() - 1)) +
      0.5 * total_var + 2.0;
  return {std::log(y_lo) - spread, std::log(y_hi) + spread};
}

}  // namespace

// -------------------------------------------------------------------------
// ConjugateTable

ConjugateTable::ConjugateTable(const UtilitySpec& u, double ln_z_min, double ln_z_max, int n)
    : u_(u) {
  if (!(ln_z_max > ln_z_min) || n < 16)
    throw domain_error("ConjugateTable: bad range or size");
  std::vector<double> lnz = linspace(ln_z_min, ln_z_max, n);
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = marginal_inverse(u, std::exp(lnz[i]));
  x_of_lnz_ = MonotoneCubic(lnz, xs);
}

double ConjugateTable::maximizer(double z) const {
  if (!(z > 0.0)) throw domain_error("ConjugateTable: z must be > 0");
  return x_of_lnz_(std::log(z));
}

double ConjugateTable::value(double z) const {
  const double xs = maximizer(z);
  return u_.evaluate(xs, 0) - xs * z;
}

double ConjugateTable::d1(double z) const { return -maximizer(z); }

double ConjugateTable::d2(double z) const {
  return -1.0 / u_.evaluate(maximizer(z), 2);
}

double ConjugateTable::d3(double z) const {
  const double xs = maximizer(z);
  const double upp = u_.evaluate(xs, 2);
  return u_.evaluate(xs, 3) / (upp * upp * upp);
}

// -------------------------------------------------------------------------
// DualCurve

DualCurve::DualCurve(std::shared_ptr<const ConjugateTable> table,
                     std::shared_ptr<const GaussHermite> quad)
    : table_(std::move(table)), quad_(std::move(quad)) {}

double DualCurve::value(double y, double v) const {
  if (!(y > 0.0)) throw domain_error("DualCurve: y must be > 0");
  if (v <= 0.0) return table_->value(y);
  const double s = std::sqrt(v);
  double acc = 0.0;
  for (int i = 0; i < quad_->size(); ++i) {
    const double z = std::exp(-0.5 * v + s * quad_->normal_node(i));
    acc += quad_->normal_weight(i) * table_->value(y * z);
  }
  return acc;
}

double DualCurve::d1(double y, double v) const {
  if (!(y > 0.0)) throw domain_error("DualCurve: y must be > 0");
  if (v <= 0.0) return table_->d1(y);
  const double s = std::sqrt(v);
  double acc = 0.0;
  for (int i = 0; i < quad_->size(); ++i) {
    const double z = std::exp(-0.5 * v + s * quad_->normal_node(i));
    acc += quad_->normal_weight(i) * z * table_->d1(y * z);
  }
  return acc;
}

double DualCurve::d2(double y, double v) const {
  if (!(y > 0.0)) throw domain_error("DualCurve: y must be > 0");
  if (v <= 0.0) return table_->d2(y);
  const double s = std::sqrt(v);
  double acc = 0.0;
  for (int i = 0; i < quad_->size(); ++i) {
    const double z = std::exp(-0.5 * v + s * quad_->normal_node(i));
    acc += quad_->normal_weight(i) * z * z * table_->d2(y * z);
  }
  return acc;
}

double DualCurve::d3(double y, double v) const {
  if (!(y > 0.0)) throw domain_error("DualCurve: y must be > 0");
  if (v <= 0.0) return table_->d3(y);
  const double s = std::sqrt(v);
  double acc = 0.0;
  for (int i = 0; i < quad_->size(); ++i) {
    const double z = std::exp(-0.5 * v + s * quad_->normal_node(i));
    acc += quad_->normal_weight(i) * z * z * z * table_->d3(y * z);
  }
  return acc;
}

double DualCurve::y_of_x(double x, double v, std::optional<double> warm_start) const {
  // d1(., v) + x is increasing in y; bracket multiplicatively then Newton.
  double y = warm_start.value_or(table_->utility().evaluate(x, 1));
  auto g = [&](double yy) { return d1(yy, v) + x; };

  double lo = y, hi = y;
  double g0 = g(y);
  if (g0 < 0.0) {
    for (int it = 0; it < 200 && g(hi) < 0.0; ++it) hi *= 2.0;
    lo = hi / 2.0;
  } else if (g0 > 0.0) {
    for (int it = 0; it < 200 && g(lo) > 0.0; ++it) lo *= 0.5;
    hi = lo * 2.0;
  } else {
    return y;
  }

  const double tol = 1e-13 * std::max(1.0, std::fabs(x));
  y = std::sqrt(lo * hi);
  for (int it = 0; it < 100; ++it) {
    const double gy = g(y);
    if (std::fabs(gy) <= tol) return y;
    if (gy > 0.0) hi = y; else lo = y;
    const double slope = d2(y, v);
    double y_next = (slope > 0.0) ? y - gy / slope : 0.0;
    if (!(y_next > lo) || !(y_next < hi)) y_next = std::sqrt(lo * hi);
    if (hi - lo <= 1e-15 * hi) return y_next;
    y = y_next;
  }
  throw numerics_error("DualCurve::y_of_x: conjugacy inversion did not converge");
}

// -------------------------------------------------------------------------
// dual_value / static_solve

DualValue dual_value(const UtilitySpec& u, const MarketSpec& model, double y,
                     const McParams& mc) {
  if (!(y > 0.0)) throw domain_error("dual_value: y must be > 0");

  if (model.kind() == MarketKind::basis_risk) {
    if (u.kind() != UtilityKind::exponential)
      throw capability_error(
          "dual_value: the basis-risk model is handled with exponential utility only");
    const double g = u.gamma();
    DistortionSolve solve(model, DistortionRoute::linear, 256, 201, 2.5);
    const double h0 = solve.entropy0();
    return {(y / g) * (std::log(y / g) - 1.0 + h0), 0.0};
  }

  const auto sample = simulate_terminal(model, mc.n_steps, mc.n_paths, mc.seed,
                                        Measure::physical, mc.threads);
  std::vector<double> values(mc.n_paths);
  parallel_for(mc.n_paths, mc.threads, [&](std::int64_t p) {
    values[p] = conjugate_value(u, y * std::exp(sample.log_z[p]));
  });
  for (double v : values)
    if (!std::isfinite(v)) throw numerics_error("dual_value: divergent sample (integrability)");
  const auto ms = mean_se(values);
  return {ms.mean, ms.se};
}

StaticSolution static_solve(const UtilitySpec& u, const MarketSpec& model, double x,
                            const McParams& mc) {
  StaticSolution out;
  out.x = x;

  if (model.kind() == MarketKind::basis_risk) {
    if (u.kind() != UtilityKind::exponential)
      throw capability_error(
          "static_solve: the basis-risk model is handled with exponential utility only");
    const double g = u.gamma();
    DistortionSolve solve(model, DistortionRoute::linear, 256, 201, 2.5);
    const double h0 = solve.entropy0();
    out.y_star = g * std::exp(-g * x - h0);
    out.v = -std::exp(-g * x - h0);
    out.v_tilde = out.v - x * out.y_star;
    out.v_xx = -g * out.y_star;
    out.v_xxx = g * g * out.y_star;
    out.mc_value = std::numeric_limits<double>::quiet_NaN();
    out.mc_std_error = std::numeric_limits<double>::quiet_NaN();
    return out;
  }

  if (model.has_constant_sharpe()) {
    const double theta = model.constant_sharpe();
    const double v_total = theta * theta * model.horizon();
    auto quad = std::make_shared<const GaussHermite>(200);
    const double y_center = u.evaluate(x, 1);
    const auto range = table_range(y_center * 1e-3, y_center * 1e3, v_total, *quad);
    auto table = std::make_shared<const ConjugateTable>(u, range.lo, range.hi, 4096);
    const DualCurve curve(table, quad);

    out.y_star = curve.y_of_x(x, v_total);
    out.v_tilde = curve.value(out.y_star, v_total);
    out.v = out.v_tilde + x * out.y_star;
    const double d2 = curve.d2(out.y_star, v_total);
    out.v_xx = -1.0 / d2;
    out.v_xxx = -curve.d3(out.y_star, v_total) / (d2 * d2 * d2);
  } else {
    // Markov Sharpe: Monte Carlo dual curve with common random numbers.
    const auto sample = simulate_terminal(model, mc.n_steps, mc.n_paths, mc.seed,
                                          Measure::physical, mc.threads);
    std::vector<double> z(mc.n_paths);
    for (int p = 0; p < mc.n_paths; ++p) z[p] = std::exp(sample.log_z[p]);

    auto g = [&](double y) {
      double acc = 0.0;
      for (double zi : z) acc += zi * conjugate(u, y * zi).d1;
      return acc / mc.n_paths + x;
    };
    double lo = u.evaluate(x, 1), hi = lo;
    int guard = 0;
    if (g(lo) < 0.0) {
      while (g(hi) < 0.0 && ++guard < 200) hi *= 2.0;
    } else {
      while (g(lo) > 0.0 && ++guard < 200) lo *= 0.5;
    }
    if (guard >= 200) throw numerics_error("static_solve: dual bracket expansion failed");
    for (int it = 0; it < 200 && (hi - lo) > 1e-12 * hi; ++it) {
      const double m = std::sqrt(lo * hi);
      if (g(m) > 0.0) hi = m; else lo = m;
    }
    out.y_star = std::sqrt(lo * hi);
    double vt = 0.0, d2 = 0.0, d3 = 0.0;
    for (double zi : z) {
      const auto c = conjugate(u, out.y_star * zi);
      vt += c.u_tilde;
      d2 += zi * zi * c.d2;
      d3 += zi * zi * zi * c.d3;
    }
    vt /= mc.n_paths;
    d2 /= mc.n_paths;
    d3 /= mc.n_paths;
    out.v_tilde = vt;
    out.v = vt + x * out.y_star;
    out.v_xx = -1.0 / d2;
    out.v_xxx = -d3 / (d2 * d2 * d2);
  }

  // Primal Monte Carlo cross-check: V(x) = E U(X_T(x)) for the optimal
  // terminal wealth produced by the dual route.
  const auto sample = simulate_terminal(model, mc.n_steps, mc.n_paths, mc.seed,
                                        Measure::physical, mc.threads);
  std::vector<double> z(mc.n_paths);
  for (int p = 0; p < mc.n_paths; ++p) z[p] = std::exp(sample.log_z[p]);
  const auto xt = optimal_terminal_wealth(u, out.y_star, z, mc.threads);
  std::vector<double> uv(mc.n_paths);
  for (int p = 0; p < mc.n_paths; ++p) uv[p] = u.evaluate(xt[p], 0);
  const auto ms = mean_se(uv);
  out.mc_value = ms.mean;
  out.mc_std_error = ms.se;
  return out;
}

std::vector<double> optimal_terminal_wealth(const UtilitySpec& u, double y_star,
                                            std::span<const double> z_terminal,
                                            int threads) {
  if (!(y_star > 0.0)) throw domain_error("optimal_terminal_wealth: y_star must be > 0");
  std::vector<double> xt(z_terminal.size());
  if (u.kind() == UtilityKind::exponential) {
    const double g = u.gamma();
    parallel_for(static_cast<std::int64_t>(z_terminal.size()), threads, [&](std::int64_t p) {
      xt[p] = -std::log(y_star * z_terminal[p] / g) / g;
    });
  } else {
    parallel_for(static_cast<std::int64_t>(z_terminal.size()), threads, [&](std::int64_t p) {
      xt[p] = marginal_inverse(u, y_star * z_terminal[p]);
    });
  }
  return xt;
}

DerivativeFlowReport derivative_flows(const UtilitySpec& u, const StaticSolution& sol,
                                      std::span<const double> z_terminal,
                                      std::optional<std::pair<double, double>> rav_bounds,
                                      int threads) {
  if (!rav_bounds)
    throw regularity_error("derivative_flows: rav1 bounds (c1, c2) are a precondition");
  const auto [c1, c2] = *rav_bounds;
  if (!(c1 > 0.0) || !(c2 >= c1))
    throw regularity_error("derivative_flows: need 0 < c1 <= c2");

  const int n = static_cast<int>(z_terminal.size());
  DerivativeFlowReport rep;
  rep.bound_lo = c1 / c2;
  rep.bound_hi = c2 / c1;
  rep.x_prime.resize(n);
  rep.x_second.resize(n);

  if (u.kind() == UtilityKind::exponential) {
    // X_T is affine in x: unit first derivative, vanishing second.
    for (int p = 0; p < n; ++p) {
      rep.x_prime[p] = 1.0;
      rep.x_second[p] = 0.0;
    }
    rep.v3_over_v2 = -u.gamma();
  } else {
    const auto xt = optimal_terminal_wealth(u, sol.y_star, z_terminal, threads);
    // First derivative by marginal transport: X' = (V''/V') U'/U''.
    std::vector<double> ratio(n);  // U'''/U'' at X_T
    parallel_for(n, threads, [&](std::int64_t p) {
      const double up = u.evaluate(xt[p], 1);
      const double upp = u.evaluate(xt[p], 2);
      rep.x_prime[p] = (sol.v_xx / sol.y_star) * (up / upp);
      ratio[p] = u.evaluate(xt[p], 3) / upp;
    });
    // V'''/V'' recovered as the Q-average of (U'''/U'')(X')^2.
    double acc = 0.0;
    for (int p = 0; p < n; ++p) acc += z_terminal[p] * ratio[p] * rep.x_prime[p] * rep.x_prime[p];
    rep.v3_over_v2 = acc / n;
    for (int p = 0; p < n; ++p)
      rep.x_second[p] = rep.v3_over_v2 * rep.x_prime[p] - ratio[p] * rep.x_prime[p] * rep.x_prime[p];
  }

  rep.x_prime_min = rep.x_prime[0];
  rep.x_prime_max = rep.x_prime[0];
  for (double v : rep.x_prime) {
    rep.x_prime_min = std::min(rep.x_prime_min, v);
    rep.x_prime_max = std::max(rep.x_prime_max, v);
  }
  const double slack = 1e-9;
  rep.containment_pass =
      rep.x_prime_min >= rep.bound_lo - slack && rep.x_prime_max <= rep.bound_hi + slack;

  std::vector<double> wq(n);
  for (int p = 0; p < n; ++p) wq[p] = z_terminal[p] * rep.x_prime[p];
  auto ms = mean_se(wq);
  rep.q_mean_x_prime = ms.mean;
  rep.q_se_x_prime = ms.se;
  rep.q_first_moment_pass = std::fabs(ms.mean - 1.0) <= 3.0 * std::max(ms.se, 1e-15);

  for (int p = 0; p < n; ++p) wq[p] = z_terminal[p] * rep.x_second[p];
  ms = mean_se(wq);
  rep.q_mean_x_second = ms.mean;
  rep.q_se_x_second = ms.se;
  rep.q_second_moment_pass = std::fabs(ms.mean) <= 3.0 * std::max(ms.se, 1e-15);

  return rep;
}

// -------------------------------------------------------------------------
// WealthFlow

struct WealthFlow::TransportSlice {
  MonotoneCubic g;     // X as a function of ln z
  MonotoneCubic g_z;   // dX/dz
  MonotoneCubic g_zz;  // d2X/dz2
};

WealthFlow::WealthFlow(const UtilitySpec& u, const MarketSpec& model,
                       std::vector<double> x_grid, std::shared_ptr<const PathBundle> paths,
                       int quad_nodes)
    : utility_(u), model_(model), x_grid_(std::move(x_grid)), paths_(std::move(paths)) {
  if (x_grid_.size() < 2) throw domain_error("WealthFlow: x grid too small");
  for (std::size_t i = 0; i + 1 < x_grid_.size(); ++i)
    if (!(x_grid_[i] < x_grid_[i + 1]))
      throw domain_error("WealthFlow: x grid must be increasing");

  const double theta = require_constant_sharpe(model_, "WealthFlow");
  const double T = model_.horizon();
  const double v_total = theta * theta * T;

  closed_form_ = (utility_.kind() == UtilityKind::exponential);

  const int n_x = static_cast<int>(x_grid_.size());
  y_grid_.resize(n_x);
  y_xx_.resize(n_x);
  y_xxx_.resize(n_x);

  if (closed_form_) {
    const double g = utility_.gamma();
    for (int i = 0; i < n_x; ++i) {
      y_grid_[i] = g * std::exp(-g * x_grid_[i] - 0.5 * v_total);
      y_xx_[i] = -g * y_grid_[i];
      y_xxx_[i] = g * g * y_grid_[i];
    }
    return;
  }

  quad_ = std::make_shared<const GaussHermite>(quad_nodes);
  const auto range =
      table_range(utility_.evaluate(x_grid_.back(), 1) * std::exp(-v_total - 1.0),
                  utility_.evaluate(x_grid_.front(), 1) * std::exp(v_total + 1.0),
                  v_total, *quad_);
  table_ = std::make_shared<const ConjugateTable>(utility_, range.lo - 8.0, range.hi + 8.0,
                                                  8192);
  curve_ = std::make_shared<const DualCurve>(table_, quad_);

  std::optional<double> warm;
  for (int i = 0; i < n_x; ++i) {
    y_grid_[i] = curve_->y_of_x(x_grid_[i], v_total, warm);
    warm = y_grid_[i];
    const double d2 = curve_->d2(y_grid_[i], v_total);
    y_xx_[i] = -1.0 / d2;
    y_xxx_[i] = -curve_->d3(y_grid_[i], v_total) / (d2 * d2 * d2);
  }

  // Transport tables: X_t(x) = G(t, y(x) Z_t) with
  // G(t, z) = E^Q[-Utilde'(z Z_{t,T})], ln Z_{t,T} ~ N(+v/2, v) under Q.
  const int nt = paths_->grid.n_times();
  const int n_z = 512;
  // z ranges over y(x) Z_t along paths; pad by 10 driver standard deviations.
  const double pad = 10.0 * std::fabs(theta) * std::sqrt(T) + v_total + 1.0;
  const auto lnz_grid = linspace(std::log(y_grid_.back()) - pad,
                                 std::log(y_grid_.front()) + pad, n_z);

  auto slices = std::make_shared<std::vector<TransportSlice>>(nt);
  std::vector<double> gv(n_z), g1(n_z), g2(n_z);
  for (int ti = 0; ti < nt; ++ti) {
    const double tau = T - paths_->grid.t(ti);
    const double v = theta * theta * tau;
    const double s = std::sqrt(std::max(v, 0.0));
    for (int j = 0; j < n_z; ++j) {
      const double z = std::exp(lnz_grid[j]);
      if (v <= 0.0) {
        gv[j] = -table_->d1(z);
        g1[j] = -table_->d2(z);
        g2[j] = -table_->d3(z);
        continue;
      }
      double a0 = 0.0, a1 = 0.0, a2 = 0.0;
      for (int q = 0; q < quad_->size(); ++q) {
        const double zeta = std::exp(0.5 * v + s * quad_->normal_node(q));
        const double w = quad_->normal_weight(q);
        const double arg = z * zeta;
        a0 += w * (-table_->d1(arg));
        a1 += w * zeta * (-table_->d2(arg));
        a2 += w * zeta * zeta * (-table_->d3(arg));
      }
      gv[j] = a0;
      g1[j] = a1;
      g2[j] = a2;
    }
    (*slices)[ti].g = MonotoneCubic(lnz_grid, gv);
    (*slices)[ti].g_z = MonotoneCubic(lnz_grid, g1);
    (*slices)[ti].g_zz = MonotoneCubic(lnz_grid, g2);
  }
  slices_ = std::move(slices);
}

double WealthFlow::y_of_x(double x) const {
  if (closed_form_) {
    const double g = utility_.gamma();
    const double theta = model_.constant_sharpe();
    return g * std::exp(-g * x - 0.5 * theta * theta * model_.horizon());
  }
  const double theta = model_.constant_sharpe();
  return curve_->y_of_x(x, theta * theta * model_.horizon());
}

double WealthFlow::x_of_y(double y) const {
  if (closed_form_) {
    const double g = utility_.gamma();
    const double theta = model_.constant_sharpe();
    return -(std::log(y / g) + 0.5 * theta * theta * model_.horizon()) / g;
  }
  const double theta = model_.constant_sharpe();
  return -curve_->d1(y, theta * theta * model_.horizon());
}

WealthPoint WealthFlow::eval_from_marginal(int path, int t_idx, double y0) const {
  if (!(y0 > 0.0)) throw domain_error("WealthFlow: marginal state must be > 0");
  WealthPoint out;
  const double theta = model_.constant_sharpe();
  const double sigma = model_.sigma();
  const double t = paths_->grid.t(t_idx);
  const double s_t = paths_->s(path, t_idx);
  const double z_t = std::exp(paths_->log_z(path, t_idx));

  if (closed_form_) {
    const double g = utility_.gamma();
    const double x = x_of_y(y0);
    out.wealth = (t_idx == 0)
                     ? x
                     : x + 0.5 * theta * theta * t / g - paths_->log_z(path, t_idx) / g;
    out.strategy = theta / (g * sigma * s_t);
    out.wealth_x = 1.0;
    out.wealth_xx = 0.0;
    out.strategy_x = 0.0;
    return out;
  }

  const auto& slice = (*slices_)[t_idx];
  const double z = y0 * z_t;
  const double lnz = std::log(z);
  const double g = slice.g(lnz);
  const double gz = slice.g_z(lnz);
  const double gzz = slice.g_zz(lnz);

  // y'(x) and y''(x) at the x corresponding to y0.
  const double v_total = theta * theta * model_.horizon();
  const double d2 = curve_->d2(y0, v_total);
  const double y_x = -1.0 / d2;
  const double y_xx = -curve_->d3(y0, v_total) / (d2 * d2 * d2);

  out.wealth = (t_idx == 0) ? -curve_->d1(y0, v_total) : g;
  out.strategy = -theta * z * gz / (sigma * s_t);
  out.wealth_x = gz * y_x * z_t;
  out.wealth_xx = gzz * (y_x * z_t) * (y_x * z_t) + gz * y_xx * z_t;
  out.strategy_x = -theta * z_t * y_x * (gz + z * gzz) / (sigma * s_t);
  return out;
}

WealthPoint WealthFlow::eval_grid(int path, int t_idx, int x_idx) const {
  WealthPoint out = eval_from_marginal(path, t_idx, y_grid_[x_idx]);
  if (t_idx == 0) out.wealth = x_grid_[x_idx];
  return out;
}

WealthPoint WealthFlow::eval(int path, int t_idx, double x) const {
  WealthPoint out = eval_from_marginal(path, t_idx, y_of_x(x));
  if (t_idx == 0) out.wealth = x;
  return out;
}

double WealthFlow::wealth_grid(int path, int t_idx, int x_idx) const {
  return eval_grid(path, t_idx, x_idx).wealth;
}

double WealthFlow::invert(int path, int t_idx, double target) const {
  const double theta = model_.constant_sharpe();
  if (closed_form_) {
    const double g = utility_.gamma();
    const double t = paths_->grid.t(t_idx);
    return target - 0.5 * theta * theta * t / g + paths_->log_z(path, t_idx) / g;
  }
  // Invert X = G(t, z) in z (G is strictly decreasing in z), then map the
  // state back to initial capital through the time-zero conjugacy.
  const auto& slice = (*slices_)[t_idx];
  double lo = slice.g.x_min(), hi = slice.g.x_max();
  if (!(target <= slice.g(lo) && target >= slice.g(hi)))
    throw grid_error("WealthFlow::invert: target outside the transport range");
  for (int it = 0; it < 200 && hi - lo > 1e-14 * (1.0 + std::fabs(hi)); ++it) {
    const double m = 0.5 * (lo + hi);
    if (slice.g(m) > target) lo = m; else hi = m;
  }
  const double z_state = std::exp(0.5 * (lo + hi));
  const double y0 = z_state / std::exp(paths_->log_z(path, t_idx));
  return x_of_y(y0);
}

double WealthFlow::marginal_state(int path, int t_idx, double x) const {
  return y_of_x(x) * std::exp(paths_->log_z(path, t_idx));
}

double WealthFlow::value_at(double x) const {
  const double theta = model_.constant_sharpe();
  const double v_total = theta * theta * model_.horizon();
  if (closed_form_) {
    const double g = utility_.gamma();
    return -std::exp(-g * x - 0.5 * v_total);
  }
  const double y = curve_->y_of_x(x, v_total);
  return curve_->value(y, v_total) + x * y;
}

// -------------------------------------------------------------------------
// dynamic_fields

FieldBundle dynamic_fields(const UtilitySpec& u, const MarketSpec& model,
                           std::span<const double> t_nodes, std::span<const double> x_nodes,
                           std::span<const double> y_nodes, int quad_nodes, int threads) {
  const double theta = require_constant_sharpe(model, "dynamic_fields");
  const double T = model.horizon();
  if (t_nodes.empty() || x_nodes.empty() || y_nodes.empty())
    throw domain_error("dynamic_fields: empty grids");
  for (double t : t_nodes)
    if (t < 0.0 || t > T + 1e-12) throw domain_error("dynamic_fields: time node outside [0, T]");

  auto quad = std::make_shared<const GaussHermite>(quad_nodes);
  const double v_total = theta * theta * T;
  double y_lo = y_nodes.front(), y_hi = y_nodes.back();
  y_lo = std::min(y_lo, u.evaluate(x_nodes.back(), 1) * std::exp(-v_total - 1.0));
  y_hi = std::max(y_hi, u.evaluate(x_nodes.front(), 1) * std::exp(v_total + 1.0));
  const auto range = table_range(y_lo, y_hi, v_total, *quad);
  auto table = std::make_shared<const ConjugateTable>(u, range.lo, range.hi, 8192);
  const DualCurve curve(table, quad);

  FieldBundle fb;
  const int nt = static_cast<int>(t_nodes.size());
  const int nx = static_cast<int>(x_nodes.size());
  const int ny = static_cast<int>(y_nodes.size());
  fb.primal.t.assign(t_nodes.begin(), t_nodes.end());
  fb.primal.x.assign(x_nodes.begin(), x_nodes.end());
  fb.primal.v = Matrix(nt, nx);
  fb.primal.v_x = Matrix(nt, nx);
  fb.primal.v_xx = Matrix(nt, nx);
  fb.dual.t.assign(t_nodes.begin(), t_nodes.end());
  fb.dual.y.assign(y_nodes.begin(), y_nodes.end());
  fb.dual.v = Matrix(nt, ny);
  fb.dual.v_y = Matrix(nt, ny);
  fb.dual.v_yy = Matrix(nt, ny);

  parallel_for(nt, threads, [&](std::int64_t ti) {
    const double tau = T - t_nodes[ti];
    const bool terminal = (tau <= 1e-14);
    const double v = theta * theta * tau;

    for (int j = 0; j < ny; ++j) {
      const double y = y_nodes[j];
      if (terminal) {
        const auto c = conjugate(u, y);  // exact terminal slice
        fb.dual.v(ti, j) = c.u_tilde;
        fb.dual.v_y(ti, j) = c.d1;
        fb.dual.v_yy(ti, j) = c.d2;
      } else {
        fb.dual.v(ti, j) = curve.value(y, v);
        fb.dual.v_y(ti, j) = curve.d1(y, v);
        fb.dual.v_yy(ti, j) = curve.d2(y, v);
      }
    }

    std::optional<double> warm;
    for (int i = 0; i < nx; ++i) {
      const double x = x_nodes[i];
      if (terminal) {
        fb.primal.v(ti, i) = u.evaluate(x, 0);  // exact terminal slice
        fb.primal.v_x(ti, i) = u.evaluate(x, 1);
        fb.primal.v_xx(ti, i) = u.evaluate(x, 2);
        continue;
      }
      const double y = curve.y_of_x(x, v, warm);
      warm = y;
      fb.primal.v(ti, i) = curve.value(y, v) + x * y;
      fb.primal.v_x(ti, i) = y;
      fb.primal.v_xx(ti, i) = -1.0 / curve.d2(y, v);
    }
  });

  return fb;
}

// -------------------------------------------------------------------------
// conditional problem

ConditionalSolution conditional_solution(const WealthFlow& flow,
                                         std::span<const double> psi_tau, int tau_idx,
                                         double x) {
  const auto& paths = flow.paths();
  const int np = paths.n_paths;
  const int nt = paths.grid.n_times();
  if (static_cast<int>(psi_tau.size()) != np)
    throw domain_error("conditional_solution: psi_tau size must match path count");
  if (tau_idx < 0 || tau_idx >= nt)
    throw domain_error("conditional_solution: tau outside the grid");

  ConditionalSolution cs;
  cs.tau_idx = tau_idx;
  cs.x = x;
  cs.xi.assign(psi_tau.begin(), psi_tau.end());
  const int n_after = nt - tau_idx;
  cs.wealth = Matrix(np, n_after);
  cs.strategy = Matrix(np, n_after - 1);

  for (int p = 0; p < np; ++p) {
    const double y0 = flow.y_of_x(cs.xi[p]);
    for (int k = 0; k < n_after; ++k) {
      const auto wp = flow.eval_from_marginal(p, tau_idx + k, y0);
      cs.wealth(p, k) = wp.wealth;
      if (k + 1 < n_after) cs.strategy(p, k) = wp.strategy;
    }
  }
  return cs;
}

ConditionalCheck conditional_checks(const WealthFlow& flow, const ConditionalSolution& cs,
                                    double v_tau_x, double y_tau_x) {
  const auto& paths = flow.paths();
  const auto& u = flow.utility();
  const int np = paths.n_paths;
  const int last = static_cast<int>(cs.wealth.cols()) - 1;

  ConditionalCheck out;
  out.value_field = v_tau_x;

  std::vector<double> z_ratio(np), u_terminal(np);
  double worst = 0.0;
  for (int p = 0; p < np; ++p) {
    const double z_tau = std::exp(paths.log_z(p, cs.tau_idx));
    const double z_T = std::exp(paths.log_z(p, paths.grid.n_steps));
    z_ratio[p] = z_T / z_tau;
    const double xt = cs.wealth(p, last);
    u_terminal[p] = u.evaluate(xt, 0);
    // Conditional duality: U'(X_T(tau, x)) = Z_T(Z_tau^{-1}(y)).
    const double resid = u.evaluate(xt, 1) - y_tau_x * z_ratio[p];
    worst = std::max(worst, std::fabs(resid));
  }
  out.duality_residual_max = worst;

  // Z_t(Z_tau^{-1}(y)) X_t(X_tau^{-1}(x)) must have zero drift on [tau, T].
  Matrix zx(np, cs.wealth.cols());
  for (int p = 0; p < np; ++p) {
    const double z_tau = std::exp(paths.log_z(p, cs.tau_idx));
    for (std::size_t k = 0; k < cs.wealth.cols(); ++k) {
      const double z_t = std::exp(paths.log_z(p, cs.tau_idx + static_cast<int>(k)));
      zx(p, k) = (y_tau_x * z_t / z_tau) * cs.wealth(p, k);
    }
  }
  const auto mart = empirical_martingale_test(zx);
  out.mart_pass = mart.pass;
  out.mart_worst_ratio = mart.worst_ratio;

  const auto dens = mean_se(z_ratio);
  out.density_norm_mean = dens.mean;
  out.density_norm_se = dens.se;
  out.density_norm_pass = std::fabs(dens.mean - 1.0) <= 3.0 * dens.se;

  const auto val = mean_se(u_terminal);
  out.value_mc = val.mean;
  out.value_mc_se = val.se;
  out.value_pass = std::fabs(val.mean - v_tau_x) <= 3.0 * val.se;
  return out;
}

SuboptimalityProbe suboptimality_probe(const WealthFlow& flow, double x,
                                       std::span<const double> scales) {
  const auto& paths = flow.paths();
  if (paths.measure != Measure::physical)
    throw domain_error("suboptimality_probe: paths must be under P");
  const auto& u = flow.utility();
  const int np = paths.n_paths;
  const int ns = paths.grid.n_steps;

  SuboptimalityProbe probe;
  probe.scales.assign(scales.begin(), scales.end());

  // Reference value by the dual route.
  const double y0 = flow.y_of_x(x);
  probe.reference_value = flow.value_at(x);

  probe.pass = true;
  for (double c : scales) {
    std::vector<double> values(np);
    for (int p = 0; p < np; ++p) {
      double wealth = x;
      for (int i = 0; i < ns; ++i) {
        const double pi = flow.eval_from_marginal(p, i, y0).strategy;
        wealth += c * pi * (paths.s(p, i + 1) - paths.s(p, i));
      }
      values[p] = u.evaluate(wealth, 0);
    }
    const auto ms = mean_se(values);
    probe.values.push_back(ms.mean);
    probe.std_errors.push_back(ms.se);
    if (ms.mean > probe.reference_value + 3.0 * ms.se) probe.pass = false;
  }
  return probe;
}

}  // namespace dualflow
