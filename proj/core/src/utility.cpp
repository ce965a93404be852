#include "dualflow/utility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dualflow/errors.hpp"

namespace dualflow {

namespace {

void require_finite(double x, const char* where) {
  if (!std::isfinite(x)) throw domain_error(std::string(where) + ": non-finite argument");
}

// k-th derivative of -exp(-g*x): -(-g)^k exp(-g*x).
double exp_utility_deriv(double g, double x, int order) {
  double sign = (order % 2 == 0) ? -1.0 : 1.0;
  return sign * std::pow(g, order) * std::exp(-g * x);
}

}  // namespace

UtilitySpec UtilitySpec::exponential(double gamma) {
  if (!(gamma > 0.0)) throw domain_error("UtilitySpec::exponential: gamma must be > 0");
  UtilitySpec u;
  u.kind_ = UtilityKind::exponential;
  u.max_order_ = 4;
  u.label_ = "exponential";
  u.gammas_ = {gamma};
  u.weights_ = {1.0};
  return u;
}

UtilitySpec UtilitySpec::exponential_mixture(std::vector<double> weights,
                                             std::vector<double> gammas) {
  if (weights.size() != gammas.size() || weights.empty())
    throw domain_error("UtilitySpec::exponential_mixture: weights/gammas size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0) || !(gammas[i] > 0.0))
      throw domain_error("UtilitySpec::exponential_mixture: weights and gammas must be > 0");
    total += weights[i];
  }
  if (std::fabs(total - 1.0) > 1e-12)
    throw domain_error("UtilitySpec::exponential_mixture: weights must sum to 1");
  UtilitySpec u;
  u.kind_ = UtilityKind::exponential_mixture;
  u.max_order_ = 4;
  u.label_ = "exponential_mixture";
  u.weights_ = std::move(weights);
  u.gammas_ = std::move(gammas);
  return u;
}

UtilitySpec UtilitySpec::custom(Evaluator evaluator, int max_order, std::string label) {
  if (!evaluator) throw domain_error("UtilitySpec::custom: null evaluator");
  if (max_order < 2) throw domain_error("UtilitySpec::custom: need derivatives to order >= 2");
  UtilitySpec u;
  u.kind_ = UtilityKind::custom;
  u.max_order_ = max_order;
  u.label_ = std::move(label);
  u.evaluator_ = std::move(evaluator);
  return u;
}

double UtilitySpec::evaluate(double x, int order) const {
  require_finite(x, "UtilitySpec::evaluate");
  if (order < 0 || order > max_order_)
    throw capability_error("UtilitySpec::evaluate: derivative order " + std::to_string(order) +
                           " not supported by variant " + label_);
  switch (kind_) {
    case UtilityKind::exponential:
      return exp_utility_deriv(gammas_[0], x, order);
    case UtilityKind::exponential_mixture: {
      double acc = 0.0;
      for (std::size_t i = 0; i < gammas_.size(); ++i)
        acc += weights_[i] * exp_utility_deriv(gammas_[i], x, order);
      return acc;
    }
    case UtilityKind::custom:
      return evaluator_(x, order);
  }
  throw capability_error("UtilitySpec::evaluate: unknown variant");
}

double UtilitySpec::gamma() const {
  if (kind_ != UtilityKind::exponential)
    throw capability_error("UtilitySpec::gamma: only defined for the exponential variant");
  return gammas_[0];
}

double marginal_inverse(const UtilitySpec& u, double y) {
  if (!(y > 0.0) || !std::isfinite(y)) throw domain_error("marginal_inverse: y must be > 0");

  // U' is strictly decreasing; expand a bracket [lo, hi] with
  // U'(lo) >= y >= U'(hi).
  constexpr double kReach = 1e5;
  double lo = 0.0, hi = 0.0;
  if (u.evaluate(0.0, 1) >= y) {
    double step = 1.0;
    while (u.evaluate(hi, 1) > y) {
      lo = hi;
      hi += step;
      step *= 2.0;
      if (hi > kReach)
        throw regularity_error("marginal_inverse: no bracket on the right; Inada violated numerically");
    }
  } else {
    double step = 1.0;
    while (u.evaluate(lo, 1) < y) {
      hi = lo;
      lo -= step;
      step *= 2.0;
      if (lo < -kReach)
        throw regularity_error("marginal_inverse: no bracket on the left; Inada violated numerically");
    }
  }

  const double tol = 1e-12 * std::max(1.0, y);
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = u.evaluate(x, 1) - y;
    if (std::fabs(f) <= tol) return x;
    if (f > 0.0) lo = x; else hi = x;

    const double fpp = u.evaluate(x, 2);
    double x_next = (fpp < 0.0) ? x - f / fpp : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(x_next) || x_next <= lo || x_next >= hi) x_next = 0.5 * (lo + hi);
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::fabs(x))) return x_next;
    x = x_next;
  }
  throw numerics_error("marginal_inverse: Newton/bisection did not converge");
}

ConjugateView conjugate(const UtilitySpec& u, double y) {
  const double x_star = marginal_inverse(u, y);
  ConjugateView v;
  v.y = y;
  v.x_star = x_star;
  v.u_tilde = u.evaluate(x_star, 0) - x_star * y;
  v.d1 = -x_star;
  const double upp = u.evaluate(x_star, 2);
  if (!(upp < 0.0)) throw regularity_error("conjugate: U'' >= 0 at the conjugate point");
  v.d2 = -1.0 / upp;
  if (u.max_order() >= 3) {
    const double uppp = u.evaluate(x_star, 3);
    v.d3 = uppp / (upp * upp * upp);
  } else {
    v.d3 = std::numeric_limits<double>::quiet_NaN();
  }
  return v;
}

double conjugate_value(const UtilitySpec& u, double y) { return conjugate(u, y).u_tilde; }

RegularityCoefficients regularity_coefficients(const UtilitySpec& u, double x) {
  require_finite(x, "regularity_coefficients");
  if (u.max_order() < 3)
    throw capability_error("regularity_coefficients: derivatives to order 3 required");
  const double up = u.evaluate(x, 1);
  const double upp = u.evaluate(x, 2);
  const double uppp = u.evaluate(x, 3);
  if (upp == 0.0) throw regularity_error("regularity_coefficients: U''(x) = 0");
  RegularityCoefficients c;
  c.r1 = -upp / up;
  c.r2 = -uppp / upp;
  c.b1 = 1.0 / c.r1;
  c.b2 = c.r2 / (c.r1 * c.r1);
  return c;
}

RegularityReport check_regularity(const UtilitySpec& u, const ProbeGrid& probes,
                                  std::span<const double> z_terminal_samples) {
  if (!(probes.x_max >= 20.0))
    throw domain_error("check_regularity: probe grid must span at least [-20, 20]");
  if (probes.n < 3) throw domain_error("check_regularity: need at least 3 probes");

  RegularityReport rep;
  rep.assumption2_note = "liminf Z_T(y)/y > 0: not numerically verifiable";

  constexpr double kEps = 1e-6;
  const int n = probes.n;
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = -probes.x_max + 2.0 * probes.x_max * i / (n - 1);

  rep.monotone_pass = true;
  rep.concave_pass = true;
  double r1_min = std::numeric_limits<double>::infinity();
  double r1_max = 0.0;
  double r2_max = 0.0;
  double r2_lip = 0.0;
  double b1_min = std::numeric_limits<double>::infinity(), b1_max = -b1_min;
  double b2_min = b1_min, b2_max = -b1_min;
  bool b_finite = true;

  double prev_r2 = 0.0;
  bool have_prev = false;
  for (int i = 0; i < n; ++i) {
    const double x = xs[i];
    const double up = u.evaluate(x, 1);
    const double upp = u.evaluate(x, 2);
    // Overflowing probes (huge tails) carry no sign information; skip them.
    if (std::isfinite(up) && up <= 0.0) rep.monotone_pass = false;
    if (std::isfinite(upp) && upp >= 0.0) rep.concave_pass = false;
    if (std::isfinite(up) && std::isfinite(upp) && up > 0.0 && upp < 0.0) {
      const double r1 = -upp / up;
      r1_min = std::min(r1_min, r1);
      r1_max = std::max(r1_max, r1);
      if (u.max_order() >= 3) {
        const double uppp = u.evaluate(x, 3);
        const double r2 = -uppp / upp;
        if (std::isfinite(r2)) {
          r2_max = std::max(r2_max, std::fabs(r2));
          if (have_prev && i > 0)
            r2_lip = std::max(r2_lip, std::fabs(r2 - prev_r2) / (xs[i] - xs[i - 1]));
          prev_r2 = r2;
          have_prev = true;
          const double b1 = 1.0 / r1;
          const double b2 = r2 / (r1 * r1);
          b1_min = std::min(b1_min, b1);
          b1_max = std::max(b1_max, b1);
          b2_min = std::min(b2_min, b2);
          b2_max = std::max(b2_max, b2);
          if (!std::isfinite(b1) || !std::isfinite(b2)) b_finite = false;
        } else {
          have_prev = false;
        }
      }
    }
  }

  rep.uprime_at_xmax = u.evaluate(probes.x_max, 1);
  rep.uprime_at_neg_xmax = u.evaluate(-probes.x_max, 1);
  rep.inada_pass = rep.monotone_pass && rep.uprime_at_xmax < kEps &&
                   rep.uprime_at_neg_xmax > 1.0 / kEps;

  // Elasticity sampled on geometric tails; overflow points are skipped.
  double el_sup = -std::numeric_limits<double>::infinity();
  double el_inf = std::numeric_limits<double>::infinity();
  bool tail_seen = false;
  for (double t : probes.tail) {
    for (double sign : {1.0, -1.0}) {
      const double x = sign * t;
      const double u0 = u.evaluate(x, 0);
      const double u1 = u.evaluate(x, 1);
      if (!std::isfinite(u0) || !std::isfinite(u1) || u0 == 0.0) continue;
      const double e = x * u1 / u0;
      tail_seen = true;
      if (sign > 0.0) el_sup = std::max(el_sup, e);
      else el_inf = std::min(el_inf, e);
    }
  }
  rep.elasticity_tail_sup = el_sup;
  rep.elasticity_tail_inf = el_inf;
  rep.elasticity_pass = tail_seen && el_sup < 1.0 && el_inf > 1.0;

  rep.c1 = r1_min;
  rep.c2 = r1_max;
  rep.rav1_pass = rep.monotone_pass && rep.concave_pass && r1_min > 0.0 &&
                  std::isfinite(r1_max) && r1_max < 1e6;

  rep.r2_max_abs = r2_max;
  rep.r2_lipschitz = r2_lip;
  rep.r1_pass = rep.rav1_pass && u.max_order() >= 3 && r2_max < 1e6 && r2_lip < 1e6;

  rep.b1_min = b1_min;
  rep.b1_max = b1_max;
  rep.b2_min = b2_min;
  rep.b2_max = b2_max;
  rep.b_bounded_pass = b_finite && std::isfinite(b1_max) && std::isfinite(b2_max);

  if (!z_terminal_samples.empty()) {
    // Boundedness probe: prefix maxima over doubling sample sizes. An
    // unbounded density keeps producing materially new maxima; a bounded
    // one saturates.
    const std::size_t nz = z_terminal_samples.size();
    for (double z : z_terminal_samples)
      if (!(z > 0.0)) throw domain_error("check_regularity: Z_T samples must be positive");
    std::vector<std::size_t> cuts;
    std::size_t cut = nz;
    while (cut >= 64 && cuts.size() < 7) {
      cuts.push_back(cut);
      cut /= 2;
    }
    std::sort(cuts.begin(), cuts.end());
    double running_max = 0.0;
    std::size_t consumed = 0;
    int growth_events = 0;
    for (std::size_t c : cuts) {
      for (; consumed < c; ++consumed)
        running_max = std::max(running_max, z_terminal_samples[consumed]);
      if (!rep.z_prefix_maxima.empty() &&
          running_max > rep.z_prefix_maxima.back() * 1.01)
        ++growth_events;
      rep.z_prefix_maxima.push_back(running_max);
    }
    rep.r2_pass = growth_events <= 1;
  }

  return rep;
}

}  // namespace dualflow
