#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "dualflow/duality.hpp"
#include "dualflow/errors.hpp"
#include "dualflow/grid.hpp"
#include "dualflow/quadrature.hpp"

using namespace dualflow;

namespace {

const double kTheta = 0.5;

MarketSpec merton_market() { return MarketSpec::black_scholes(0.1, 0.2, 1.0, 1.0); }

UtilitySpec mix_utility() { return UtilitySpec::exponential_mixture({0.5, 0.5}, {1.0, 2.0}); }

std::shared_ptr<const PathBundle> bundle(const MarketSpec& m, int n_paths, int n_steps,
                                         std::uint64_t seed) {
  return std::make_shared<PathBundle>(
      simulate_paths(m, TimeGrid(m.horizon(), n_steps), n_paths, seed, Measure::physical));
}

double fit_order(const std::vector<double>& hs, const std::vector<double>& errs) {
  const int n = static_cast<int>(hs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double x = std::log(hs[i]);
    const double y = std::log(errs[i]);
    sx += x; sy += y; sxx += x * x; sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("Monte Carlo dual value matches the exponential closed form") {
  const auto u = UtilitySpec::exponential(1.0);
  const auto m = merton_market();
  const auto dv = dual_value(u, m, 1.0, {50000, 3, 1, 1});
  // Vtilde(1) = ln 1 - 1 + theta^2 T / 2 = -0.875.
  CHECK(std::fabs(dv.value - (-0.875)) <= 3.0 * dv.std_error);
  CHECK(dv.std_error < 0.01);

  // No investment opportunity: Vtilde(y) = Utilde(y) with zero error.
  const auto m0 = MarketSpec::black_scholes(0.0, 0.2, 1.0, 1.0);
  const auto dv0 = dual_value(u, m0, 1.0, {200, 4, 1, 1});
  CHECK(dv0.value == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(dv0.std_error == doctest::Approx(0.0));

  CHECK_THROWS_AS(dual_value(u, m, -1.0), domain_error);
}

TEST_CASE("Monte Carlo dual value matches 200-node quadrature for the mixture") {
  const auto u = mix_utility();
  const auto m = merton_market();
  const double y = 0.9;
  const auto dv = dual_value(u, m, y, {50000, 5, 1, 1});

  GaussHermite gh(200);
  const double v = kTheta * kTheta;  // T = 1
  const double oracle = gh.expect_lognormal(
      -0.5 * v, std::sqrt(v), [&](double z) { return conjugate_value(u, y * z); });
  CHECK(std::fabs(dv.value - oracle) <= 3.0 * dv.std_error);
}

TEST_CASE("static solve reproduces the Merton closed form") {
  const auto u = UtilitySpec::exponential(1.0);
  const auto m = merton_market();
  const auto sol = static_solve(u, m, 0.0, {100000, 42, 1, 1});

  const double y_ref = std::exp(-0.125);
  CHECK(std::fabs(sol.y_star - y_ref) < 1e-8);
  CHECK(std::fabs(sol.v - (-y_ref)) < 1e-8);
  CHECK(sol.v_tilde == doctest::Approx(sol.v - 0.0 * sol.y_star).epsilon(1e-9));
  // Conjugacy: V(x) = Vtilde(y*) + x y*.
  CHECK(sol.v == doctest::Approx(sol.v_tilde + sol.x * sol.y_star));
  // V'' = -gamma y* and V''' = gamma^2 y* for the exponential.
  CHECK(sol.v_xx == doctest::Approx(-y_ref).epsilon(1e-7));
  CHECK(sol.v_xxx == doctest::Approx(y_ref).epsilon(1e-6));
  // Primal Monte Carlo cross-check.
  CHECK(std::fabs(sol.mc_value - sol.v) <= 3.0 * sol.mc_std_error);

  const auto sol2 = static_solve(UtilitySpec::exponential(2.0), m, 1.0, {20000, 43, 1, 1});
  CHECK(std::fabs(sol2.v - (-std::exp(-2.125))) < 1e-8);

  // theta = 0: no investment opportunity.
  const auto m0 = MarketSpec::black_scholes(0.0, 0.2, 1.0, 1.0);
  const auto sol0 = static_solve(u, m0, 0.0, {5000, 44, 1, 1});
  CHECK(sol0.v == doctest::Approx(-1.0).epsilon(1e-10));
  CHECK(sol0.y_star == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("y* is decreasing in initial capital") {
  const auto u = mix_utility();
  const auto m = merton_market();
  double prev = 1e300;
  for (double x : {-1.0, 0.0, 1.0}) {
    const auto sol = static_solve(u, m, x, {5000, 45, 1, 1});
    CHECK(sol.y_star < prev);
    CHECK(sol.v_xx < 0.0);
    prev = sol.y_star;
  }
}

TEST_CASE("optimal terminal wealth: pathwise duality and budget") {
  const auto u = UtilitySpec::exponential(1.0);
  const auto m = merton_market();
  const auto sol = static_solve(u, m, 0.0, {20000, 46, 1, 1});
  const auto sample = simulate_terminal(m, 1, 100000, 47, Measure::physical);
  std::vector<double> z(sample.log_z.size());
  for (std::size_t p = 0; p < z.size(); ++p) z[p] = std::exp(sample.log_z[p]);

  const auto xt = optimal_terminal_wealth(u, sol.y_star, z);

  double worst = 0.0;
  for (std::size_t p = 0; p < z.size(); ++p)
    worst = std::max(worst, std::fabs(u.evaluate(xt[p], 1) - sol.y_star * z[p]));
  CHECK(worst < 1e-10);

  // Closed form X_T = x + theta^2 T/(2 gamma) - ln Z_T / gamma.
  for (std::size_t p = 0; p < 50; ++p)
    CHECK(xt[p] == doctest::Approx(0.125 - sample.log_z[p]).epsilon(1e-9));

  // Budget: E^Q X_T = x, estimated with Z as the change of measure.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t p = 0; p < z.size(); ++p) {
    const double v = z[p] * xt[p];
    const double d = v - mean;
    mean += d / (p + 1);
    m2 += d * (v - mean);
  }
  const double se = std::sqrt(m2 / (z.size() - 1) / z.size());
  CHECK(std::fabs(mean - 0.0) <= 3.0 * se);

  // theta = 0 pins X_T = x on every path.
  const auto xt0 = optimal_terminal_wealth(u, u.evaluate(0.3, 1), {1.0, 1.0, 1.0});
  for (double v : xt0) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("pathwise duality for the mixture stays at root-finding accuracy") {
  const auto u = mix_utility();
  const auto m = merton_market();
  const auto sol = static_solve(u, m, 0.0, {20000, 48, 1, 1});
  const auto sample = simulate_terminal(m, 1, 50000, 49, Measure::physical);
  std::vector<double> z(sample.log_z.size());
  for (std::size_t p = 0; p < z.size(); ++p) z[p] = std::exp(sample.log_z[p]);
  const auto xt = optimal_terminal_wealth(u, sol.y_star, z);
  double worst = 0.0;
  for (std::size_t p = 0; p < z.size(); ++p)
    worst = std::max(worst, std::fabs(u.evaluate(xt[p], 1) - sol.y_star * z[p]));
  CHECK(worst < 1e-10);
}

TEST_CASE("derivative flows: exponential is exactly affine") {
  const auto u = UtilitySpec::exponential(1.3);
  const auto m = merton_market();
  const auto sol = static_solve(u, m, 0.0, {5000, 50, 1, 1});
  const auto sample = simulate_terminal(m, 1, 20000, 51, Measure::physical);
  std::vector<double> z(sample.log_z.size());
  for (std::size_t p = 0; p < z.size(); ++p) z[p] = std::exp(sample.log_z[p]);

  const auto rep = derivative_flows(u, sol, z, std::make_pair(1.3, 1.3));
  for (double v : rep.x_prime) CHECK(v == 1.0);
  for (double v : rep.x_second) CHECK(v == 0.0);
  CHECK(rep.containment_pass);
  CHECK(rep.q_first_moment_pass);
  CHECK(rep.q_second_moment_pass);

  CHECK_THROWS_AS(derivative_flows(u, sol, z, std::nullopt), regularity_error);
}

TEST_CASE("derivative flows: mixture containment and Q moments") {
  const auto u = mix_utility();
  const auto m = merton_market();
  const auto sol = static_solve(u, m, 0.0, {40000, 52, 1, 1});
  const auto sample = simulate_terminal(m, 1, 100000, 53, Measure::physical);
  std::vector<double> z(sample.log_z.size());
  for (std::size_t p = 0; p < z.size(); ++p) z[p] = std::exp(sample.log_z[p]);

  const auto rep = derivative_flows(u, sol, z, std::make_pair(1.0, 2.0));
  CHECK(rep.bound_lo == doctest::Approx(0.5));
  CHECK(rep.bound_hi == doctest::Approx(2.0));
  CHECK(rep.containment_pass);
  CHECK(rep.x_prime_min >= 0.5 - 1e-9);
  CHECK(rep.x_prime_max <= 2.0 + 1e-9);
  CHECK(rep.q_first_moment_pass);
  CHECK(rep.q_second_moment_pass);

  // Independent oracle: differentiate the budget constraint numerically.
  const double h = 0.05;
  const auto sol_p = static_solve(u, m, h, {40000, 52, 1, 1});
  const auto sol_m = static_solve(u, m, -h, {40000, 52, 1, 1});
  double mean_p = 0.0, mean_m = 0.0;
  const auto xt_p = optimal_terminal_wealth(u, sol_p.y_star, z);
  const auto xt_m = optimal_terminal_wealth(u, sol_m.y_star, z);
  for (std::size_t p = 0; p < z.size(); ++p) {
    mean_p += z[p] * xt_p[p];
    mean_m += z[p] * xt_m[p];
  }
  mean_p /= z.size();
  mean_m /= z.size();
  CHECK((mean_p - mean_m) / (2 * h) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("wealth flow: exponential closed forms") {
  const auto u = UtilitySpec::exponential(1.0);
  const auto m = merton_market();
  const auto paths = bundle(m, 256, 64, 60);
  const WealthFlow flow(u, m, linspace(-3.0, 3.0, 61), paths);
  CHECK(flow.exponential_closed_form());

  // X_0(x) = x exactly; pi = theta/(gamma sigma S).
  for (int xi = 0; xi < 61; ++xi)
    CHECK(flow.wealth_grid(0, 0, xi) == flow.x_grid()[xi]);
  const auto wp = flow.eval_grid(0, 0, 30);
  CHECK(wp.strategy == doctest::Approx(kTheta / (1.0 * 0.2 * 1.0)));
  CHECK(wp.wealth_x == 1.0);
  CHECK(wp.wealth_xx == 0.0);

  // Closed form along a path.
  for (int ti : {7, 33, 64}) {
    const double t = paths->grid.t(ti);
    const double expect = 0.5 + 0.5 * kTheta * kTheta * t - paths->log_z(3, ti);
    CHECK(flow.eval(3, ti, 0.5).wealth == doctest::Approx(expect).epsilon(1e-12));
  }

  // Analytic inverse round-trips.
  for (int ti : {0, 13, 64}) {
    const double psi = flow.invert(5, ti, 0.8);
    CHECK(flow.eval(5, ti, psi).wealth == doctest::Approx(0.8).epsilon(1e-11));
  }
}

TEST_CASE("wealth flow: mixture transport matches direct quadrature") {
  const auto u = mix_utility();
  const auto m = merton_market();
  const auto paths = bundle(m, 64, 32, 61);
  const WealthFlow flow(u, m, linspace(-3.0, 3.0, 31), paths);
  CHECK(!flow.exponential_closed_form());

  // Direct oracle: X_t(x) = E^Q[-Utilde'(y(x) Z_T)|F_t] with exact
  // conjugate root-finds, no tables.
  GaussHermite gh(200);
  for (int xi : {5, 15, 25}) {
    const double y0 = flow.y_of_grid_x(xi);
    for (int ti : {0, 11, 32}) {
      const double tau = 1.0 - paths->grid.t(ti);
      const double v = kTheta * kTheta * tau;
      const double z_t = std::exp(paths->log_z(7, ti));
      double oracle;
      if (v <= 0.0) {
        oracle = marginal_inverse(u, y0 * z_t);
      } else {
        oracle = gh.expect_lognormal(0.5 * v, std::sqrt(v), [&](double zeta) {
          return marginal_inverse(u, y0 * z_t * zeta);
        });
      }
      const double got = flow.eval_grid(7, ti, xi).wealth;
      if (ti == 0) {
        CHECK(got == flow.x_grid()[xi]);
      } else {
        CHECK(got == doctest::Approx(oracle).epsilon(1e-8));
      }
    }
  }

  // Strict monotonicity of the flow in x across paths and times.
  for (int p = 0; p < 64; p += 7) {
    for (int ti : {0, 9, 21, 32}) {
      double prev = -1e300;
      for (int xi = 0; xi < 31; ++xi) {
        const double w = flow.wealth_grid(p, ti, xi);
        CHECK(w > prev);
        prev = w;
      }
    }
  }

  // Inverse round-trip through the transport tables.
  for (int ti : {3, 17, 30}) {
    const double psi = flow.invert(9, ti, -0.4);
    CHECK(flow.eval(9, ti, psi).wealth == doctest::Approx(-0.4).epsilon(1e-9));
  }
}

TEST_CASE("self-financing residual decays at the Euler rate") {
  const auto u = UtilitySpec::exponential(1.0);
  const auto m = merton_market();
  std::vector<double> hs, errs;
  for (int n_steps : {64, 128, 256, 512}) {
    const auto paths = bundle(m, 256, n_steps, 62);
    const WealthFlow flow(u, m, {-1.0, 0.0, 1.0}, paths);
    double worst = 0.0;
    for (int p = 0; p < 256; ++p) {
      double acc = 0.0;
      for (int i = 0; i < n_steps; ++i)
        acc += flow.eval_grid(p, i, 1).strategy * (paths->s(p, i + 1) - paths->s(p, i));
      worst = std::max(worst, std::fabs(flow.eval_grid(p, n_steps, 1).wealth - 0.0 - acc));
    }
    hs.push_back(1.0 / n_steps);
    errs.push_back(worst);
  }
  CHECK(fit_order(hs, errs) >= 0.4);
}

TEST_CASE("quadratic variation of wealth differences is continuous in x") {
  const auto m = merton_market();

  // Exponential: X(b) - X(a) = b - a, realized quadratic variation is zero.
  {
    const auto u = UtilitySpec::exponential(1.0);
    const auto paths = bundle(m, 32, 64, 63);
    const WealthFlow flow(u, m, {0.0, 0.5}, paths);
    for (int p = 0; p < 32; ++p) {
      double qv = 0.0;
      for (int i = 0; i < 64; ++i) {
        const double d1 = flow.wealth_grid(p, i + 1, 1) - flow.wealth_grid(p, i + 1, 0);
        const double d0 = flow.wealth_grid(p, i, 1) - flow.wealth_grid(p, i, 0);
        qv += (d1 - d0) * (d1 - d0);
      }
      CHECK(qv == doctest::Approx(0.0).epsilon(1e-20));
    }
  }

  // Mixture: realized <X(b)-X(a)> decays at order >= 1.9 in (b-a).
  {
    const auto u = mix_utility();
    const auto paths = bundle(m, 128, 64, 64);
    std::vector<double> gaps = {0.8, 0.4, 0.2, 0.1};
    std::vector<double> qvs;
    for (double gap : gaps) {
      const WealthFlow flow(u, m, {0.0, gap}, paths);
      double acc = 0.0;
      for (int p = 0; p < 128; ++p) {
        double qv = 0.0;
        for (int i = 0; i < 64; ++i) {
          const double d1 = flow.wealth_grid(p, i + 1, 1) - flow.wealth_grid(p, i + 1, 0);
          const double d0 = flow.wealth_grid(p, i, 1) - flow.wealth_grid(p, i, 0);
          qv += (d1 - d0) * (d1 - d0);
        }
        acc += qv;
      }
      qvs.push_back(acc / 128);
    }
    CHECK(fit_order(gaps, qvs) >= 1.9);
  }
}

TEST_CASE("martingale diagnostics along the optimal flow") {
  const auto u = UtilitySpec::exponential(1.0);
  const auto m = merton_market();
  const auto paths = bundle(m, 20000, 32, 65);
  const WealthFlow flow(u, m, {0.0}, paths);

  // Z_t X_t(x) is a martingale.
  Matrix zx(paths->n_paths, 33);
  for (int p = 0; p < paths->n_paths; ++p)
    for (int ti = 0; ti <= 32; ++ti)
      zx(p, ti) = std::exp(paths->log_z(p, ti)) * flow.wealth_grid(p, ti, 0);
  CHECK(empirical_martingale_test(zx).pass);

  // Optimality principle: V(t, X_t(x)) is a martingale.
  Matrix vfield(paths->n_paths, 33);
  for (int p = 0; p < paths->n_paths; ++p)
    for (int ti = 0; ti <= 32; ++ti) {
      const double t = paths->grid.t(ti);
      const double xw = flow.wealth_grid(p, ti, 0);
      vfield(p, ti) = -std::exp(-xw - 0.125 * (1.0 - t));
    }
  CHECK(empirical_martingale_test(vfield).pass);
}

TEST_CASE("dynamic fields match the Merton closed form") {
  const auto u = UtilitySpec::exponential(1.0);
  const auto m = merton_market();
  const auto t_nodes = linspace(0.0, 1.0, 21);
  const auto x_nodes = linspace(-3.0, 3.0, 31);
  const auto y_nodes = logspace(0.05, 20.0, 31);
  const auto fb = dynamic_fields(u, m, t_nodes, x_nodes, y_nodes, 200, 2);

  double worst = 0.0;
  for (int ti = 0; ti < 21; ++ti)
    for (int xi = 0; xi < 31; ++xi) {
      const double ref = -std::exp(-x_nodes[xi] - 0.125 * (1.0 - t_nodes[ti]));
      worst = std::max(worst, std::fabs(fb.primal.v(ti, xi) - ref));
    }
  CHECK(worst < 1e-9);
  CHECK(fb.primal.v(0, 15) == doctest::Approx(-0.88250).epsilon(1e-5));

  // Terminal slices are exact.
  for (int xi = 0; xi < 31; ++xi) CHECK(fb.primal.v(20, xi) == u.evaluate(x_nodes[xi], 0));
  for (int yi = 0; yi < 31; ++yi) {
    const double y = y_nodes[yi];
    CHECK(fb.dual.v(20, yi) == doctest::Approx(y * (std::log(y) - 1.0)).epsilon(1e-12));
    CHECK(fb.dual.v_yy(20, yi) > 0.0);
  }

  // Concavity / convexity on the interior.
  for (int ti = 0; ti < 21; ++ti)
    for (int xi = 0; xi < 31; ++xi) CHECK(fb.primal.v_xx(ti, xi) < 0.0);
  for (int ti = 0; ti < 21; ++ti)
    for (int yi = 0; yi < 31; ++yi) CHECK(fb.dual.v_yy(ti, yi) > 0.0);

  // Argmax consistency with the static solve.
  const auto sol = static_solve(u, m, 0.0, {5000, 66, 1, 1});
  CHECK(fb.primal.v_x(0, 15) == doctest::Approx(sol.y_star).epsilon(1e-9));
}

TEST_CASE("marginal value along the flow matches the dual state (main transport)") {
  const auto u = mix_utility();
  const auto m = merton_market();
  const auto paths = bundle(m, 16, 16, 67);
  const WealthFlow flow(u, m, linspace(-2.0, 2.0, 21), paths);

  const auto t_nodes = linspace(0.0, 1.0, 17);
  const auto x_nodes = linspace(-6.0, 6.0, 241);
  const auto y_nodes = logspace(0.05, 20.0, 21);
  const auto fb = dynamic_fields(u, m, t_nodes, x_nodes, y_nodes, 160, 2);

  // V'(t, X_t(x)) = y(x) Z_t within 1% on interior samples.
  for (int p = 0; p < 16; p += 3) {
    for (int ti : {4, 8, 12}) {
      for (int xi : {6, 10, 14}) {
        const double xw = flow.wealth_grid(p, ti, xi);
        if (xw < -5.5 || xw > 5.5) continue;
        const double state = flow.y_of_grid_x(xi) * std::exp(paths->log_z(p, ti));
        // Interpolate V' at (t_node == grid t, xw).
        const auto row = fb.primal.v_x.row(ti);
        const double vprime = lerp_sorted(x_nodes, row, xw);
        CHECK(vprime == doctest::Approx(state).epsilon(0.01));
      }
    }
  }
}

TEST_CASE("conditional solution composes the flow with the adapted inverse") {
  const auto u = UtilitySpec::exponential(1.0);
  const auto m = merton_market();
  const auto paths = bundle(m, 8000, 32, 68);
  const WealthFlow flow(u, m, linspace(-3.0, 3.0, 61), paths);

  // tau = 0 is the identity composition.
  {
    std::vector<double> psi0(paths->n_paths, 0.25);
    const auto cs = conditional_solution(flow, psi0, 0, 0.25);
    for (int p = 0; p < 100; ++p) {
      CHECK(cs.wealth(p, 0) == doctest::Approx(0.25).epsilon(1e-12));
      CHECK(cs.wealth(p, 32) ==
            doctest::Approx(flow.eval(p, 32, 0.25).wealth).epsilon(1e-12));
    }
  }

  const int tau_idx = 16;  // tau = 0.5
  const double x = 0.0;
  std::vector<double> psi(paths->n_paths);
  for (int p = 0; p < paths->n_paths; ++p) psi[p] = flow.invert(p, tau_idx, x);
  const auto cs = conditional_solution(flow, psi, tau_idx, x);

  // Restart identity X_tau(tau, x) = x.
  for (int p = 0; p < paths->n_paths; p += 100)
    CHECK(cs.wealth(p, 0) == doctest::Approx(x).epsilon(1e-10));

  // Closed form X_T(tau, x) = x + theta^2 (T-tau)/(2g) - ln(Z_T/Z_tau)/g.
  for (int p = 0; p < 200; ++p) {
    const double lnratio = paths->log_z(p, 32) - paths->log_z(p, tau_idx);
    CHECK(cs.wealth(p, 16) == doctest::Approx(x + 0.0625 - lnratio).epsilon(1e-10));
  }

  // Conditional value, duality residual, drift and density normalization.
  const double tau = 0.5;
  const double v_tau_x = -std::exp(-x - 0.125 * (1.0 - tau));
  const double y_tau_x = std::exp(-x - 0.125 * (1.0 - tau));
  const auto check = conditional_checks(flow, cs, v_tau_x, y_tau_x);
  CHECK(check.duality_residual_max < 1e-8);
  CHECK(check.mart_pass);
  CHECK(check.density_norm_pass);
  CHECK(check.value_pass);
}

TEST_CASE("scaled strategies are dominated (suboptimality probe)") {
  const auto m = merton_market();
  const std::vector<double> scales = {0.5, 0.8, 1.2, 2.0};

  {
    const auto u = UtilitySpec::exponential(1.0);
    const auto paths = bundle(m, 20000, 128, 69);
    const WealthFlow flow(u, m, {0.0}, paths);
    const auto probe = suboptimality_probe(flow, 0.0, scales);
    CHECK(probe.pass);
    CHECK(probe.reference_value == doctest::Approx(-std::exp(-0.125)).epsilon(1e-10));
    // Strict domination away from c = 1.
    CHECK(probe.values[0] < probe.reference_value);
    CHECK(probe.values[3] < probe.reference_value);
  }

  {
    const auto u = mix_utility();
    const auto paths = bundle(m, 8000, 64, 70);
    const WealthFlow flow(u, m, linspace(-2.0, 2.0, 11), paths);
    const auto probe = suboptimality_probe(flow, 0.0, scales);
    CHECK(probe.pass);
  }
}
