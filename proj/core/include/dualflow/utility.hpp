#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dualflow {

enum class UtilityKind { exponential, exponential_mixture, custom };

/// Utility function on the whole real line: strictly increasing, strictly
/// concave, Inada at both ends. Exponential and mixture variants carry
/// exact derivatives to order 4; custom variants supply an analytic
/// derivative ladder (order 3 required for the third-derivative checks).
class UtilitySpec {
 public:
  using Evaluator = std::function<double(double x, int order)>;

  static UtilitySpec exponential(double gamma);
  static UtilitySpec exponential_mixture(std::vector<double> weights,
                                         std::vector<double> gammas);
  static UtilitySpec custom(Evaluator evaluator, int max_order,
                            std::string label = "custom");

  /// order-th derivative of U at x (order 0 = U itself).
  double evaluate(double x, int order) const;

  UtilityKind kind() const { return kind_; }
  int max_order() const { return max_order_; }
  const std::string& label() const { return label_; }

  /// Risk aversion gamma; only for the plain exponential variant.
  double gamma() const;
  const std::vector<double>& mixture_weights() const { return weights_; }
  const std::vector<double>& mixture_gammas() const { return gammas_; }

 private:
  UtilitySpec() = default;

  UtilityKind kind_ = UtilityKind::custom;
  int max_order_ = 0;
  std::string label_;
  std::vector<double> weights_;
  std::vector<double> gammas_;
  Evaluator evaluator_;
};

/// Convex conjugate point data at y > 0.
struct ConjugateView {
  double y = 0.0;
  double u_tilde = 0.0;  // Utilde(y) = U(x*) - x* y
  double x_star = 0.0;   // argmax of U(x) - x y, i.e. U'(x*) = y
  double d1 = 0.0;       // Utilde'(y)  = -x*
  double d2 = 0.0;       // Utilde''(y) = -1/U''(x*)
  double d3 = 0.0;       // Utilde'''(y) = U'''(x*)/U''(x*)^3
};

/// Solve U'(x) = y (expanding bracket + safeguarded Newton).
double marginal_inverse(const UtilitySpec& u, double y);

ConjugateView conjugate(const UtilitySpec& u, double y);

/// Direct evaluation of Utilde(y) = sup_x (U(x) - x y).
double conjugate_value(const UtilitySpec& u, double y);

struct RegularityCoefficients {
  double r1 = 0.0;  // -U''/U'
  double r2 = 0.0;  // -U'''/U''
  double b1 = 0.0;  // y Utilde''(y) = 1/R1        at y = U'(x)
  double b2 = 0.0;  // R2/R1^2 = y^2 |Utilde'''(y)| at y = U'(x)
};

RegularityCoefficients regularity_coefficients(const UtilitySpec& u, double x);

/// Probe grid for the regularity report; x_max must be >= 20.
struct ProbeGrid {
  double x_max = 40.0;
  int n = 321;
  std::vector<double> tail = {5.0, 10.0, 20.0, 40.0};
};

struct RegularityReport {
  // Inada: U' sign/limits at the grid extremes, eps = 1e-6.
  bool inada_pass = false;
  double uprime_at_xmax = 0.0;
  double uprime_at_neg_xmax = 0.0;
  bool monotone_pass = false;   // U' > 0 at all probes
  bool concave_pass = false;    // U'' < 0 at all probes
  // Reasonable asymptotic elasticity sampled on geometric tails.
  bool elasticity_pass = false;
  double elasticity_tail_sup = 0.0;  // max of xU'/U over positive tail
  double elasticity_tail_inf = 0.0;  // min of xU'/U over negative tail
  // Two-sided risk-aversion bounds c1 <= R1 <= c2.
  bool rav1_pass = false;
  double c1 = 0.0;
  double c2 = 0.0;
  // r1): R2 bounded and Lipschitz (difference-quotient surrogate).
  bool r1_pass = false;
  double r2_max_abs = 0.0;
  double r2_lipschitz = 0.0;
  // r2): boundedness of the martingale density, from terminal samples.
  std::optional<bool> r2_pass;
  std::vector<double> z_prefix_maxima;
  // B1, B2 ranges over the probe grid (mapped through y = U'(x)).
  double b1_min = 0.0, b1_max = 0.0;
  double b2_min = 0.0, b2_max = 0.0;
  bool b_bounded_pass = false;
  std::string assumption2_note;  // liminf Z_T(y)/y > 0 has no finite-sample test
};

/// Finite-probe verdicts for the regularity conditions. Limits are sampled,
/// not proven. Pass z_terminal_samples (simulated Z_T draws, any order) to
/// get an r2 verdict; leave empty to skip it.
RegularityReport check_regularity(const UtilitySpec& u, const ProbeGrid& probes,
                                  std::span<const double> z_terminal_samples = {});

}  // namespace dualflow
