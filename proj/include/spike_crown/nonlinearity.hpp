#pragma once

#include <string>
#include <vector>

namespace spike_crown {

/// Odd power nonlinearity f(t) = |t|^{p-2} t with primitive F(t) = |t|^p / p.
///
/// Only the power family is provided. Other odd, superlinear, subcritical
/// nonlinearities would slot in behind the same eval_f / eval_F / eval_fprime
/// surface, but their ground-state uniqueness has to be established case by case.
class Nonlinearity {
 public:
  /// Throws Error(precondition) unless p > 2 and, for N >= 3, p < 2N/(N-2).
  explicit Nonlinearity(double p, int dimension_n = 2);

  double p() const noexcept { return p_; }
  int dimension_n() const noexcept { return dimension_n_; }

  double eval_f(double t) const;
  double eval_F(double t) const;
  double eval_fprime(double t) const;

 private:
  double p_;
  int dimension_n_;
};

struct HypothesisCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct HypothesisReport {
  std::vector<HypothesisCheck> checks;
  bool all_passed() const;
};

/// Samples f on a symmetric grid and reports on the structural hypotheses:
/// admissible exponent, oddness, f(0) = f'(0) = 0, monotone growth on t > 0.
/// Never throws; an inadmissible exponent shows up as a failed check.
HypothesisReport validate_hypotheses(double p, int dimension_n);
HypothesisReport validate_hypotheses(const Nonlinearity& nl);

}  // namespace spike_crown
