#include "spike_crown/nonlinearity.hpp"

#include <cmath>
#include <sstream>

#include "spike_crown/error.hpp"

namespace spike_crown {

namespace {

bool exponent_admissible(double p, int n, std::string* why) {
  std::ostringstream os;
  if (!std::isfinite(p) || !(p > 2.0)) {
    os << "p = " << p << " must exceed 2";
    if (why) *why = os.str();
    return false;
  }
  if (n < 1) {
    os << "dimension " << n << " must be >= 1";
    if (why) *why = os.str();
    return false;
  }
  if (n >= 3 && !(p < 2.0 * n / (n - 2.0))) {
    os << "p = " << p << " is not subcritical for N = " << n;
    if (why) *why = os.str();
    return false;
  }
  return true;
}

void require_finite(double t) {
  if (!std::isfinite(t)) fail(ErrorKind::domain, "nonlinearity evaluated at a non-finite argument");
}

// Same formulas as the member functions, usable before construction succeeds.
double raw_f(double p, double t) { return std::pow(std::abs(t), p - 2.0) * t; }
double raw_fprime(double p, double t) {
  return t == 0.0 ? 0.0 : (p - 1.0) * std::pow(std::abs(t), p - 2.0);
}

}  // namespace

Nonlinearity::Nonlinearity(double p, int dimension_n) : p_(p), dimension_n_(dimension_n) {
  std::string why;
  if (!exponent_admissible(p, dimension_n, &why)) fail(ErrorKind::precondition, why);
}

double Nonlinearity::eval_f(double t) const {
  require_finite(t);
  // Computed on |t| and re-signed so oddness is exact.
  const double magnitude = std::pow(std::abs(t), p_ - 1.0);
  return t < 0.0 ? -magnitude : magnitude;
}

double Nonlinearity::eval_F(double t) const {
  require_finite(t);
  return std::pow(std::abs(t), p_) / p_;
}

double Nonlinearity::eval_fprime(double t) const {
  require_finite(t);
  return raw_fprime(p_, t);
}

bool HypothesisReport::all_passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return !checks.empty();
}

HypothesisReport validate_hypotheses(double p, int dimension_n) {
  HypothesisReport report;
  std::string why;
  const bool admissible = exponent_admissible(p, dimension_n, &why);
  report.checks.push_back({"exponent", admissible, admissible ? "superlinear, subcritical" : why});

  // The structural checks are still sampled for inadmissible p so the report is complete.
  const int samples = 2001;
  const double t_max = 10.0;
  bool odd = true;
  bool monotone = true;
  double previous = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double t = t_max * i / (samples - 1);
    const double fp = raw_f(p, t);
    const double fm = raw_f(p, -t);
    if (fp != -fm) odd = false;
    if (i > 0 && !(fp > previous)) monotone = false;
    previous = fp;
  }
  report.checks.push_back({"odd", odd, "f(-t) = -f(t) on [-10, 10]"});

  const bool zero_at_origin = raw_f(p, 0.0) == 0.0 && raw_fprime(p, 0.0) == 0.0 &&
                              std::abs(raw_fprime(p, 1e-8)) < 1e-3;
  report.checks.push_back({"vanishing_at_zero", zero_at_origin && p > 1.0,
                           "f(0) = 0 and f'(t) -> 0 as t -> 0"});
  report.checks.push_back({"monotone_growth", monotone, "f strictly increasing on (0, 10]"});
  return report;
}

HypothesisReport validate_hypotheses(const Nonlinearity& nl) {
  return validate_hypotheses(nl.p(), nl.dimension_n());
}

}  // namespace spike_crown
