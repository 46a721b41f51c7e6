#pragma once

#include <span>
#include <vector>

#include "spike_crown/nonlinearity.hpp"

namespace spike_crown {

struct ShootOptions {
  double tol = 1e-12;       ///< bisection bracket width on w(0)
  double h_r = 0.005;       ///< table spacing
  double r_tail = 12.0;     ///< tail formula used beyond this radius
  double r_max = 24.0;      ///< table extent
  int max_iterations = 200;
};

/// Tabulated radial ground state w(r) of  w'' + (N-1)/r w' - w + f(w) = 0.
///
/// For r <= r_tail values come from cubic Hermite interpolation of the table.
/// Beyond r_tail the linearized tail  C * g_N(r)  is used, where
/// g_N(r) = sqrt(2/pi) r^{1-N/2} K_{N/2-1}(r)  is the decaying solution of
/// w'' + (N-1)/r w' = w normalized so that r^{(N-1)/2} e^r g_N(r) -> 1, and C
/// is matched to the table at r_tail (continuity is exact).
class RadialProfile {
 public:
  RadialProfile(double p, int dimension_n, double h_r, std::vector<double> w_values,
                std::vector<double> w_prime_values, double w0, double decay_A, double r_tail);

  double p() const noexcept { return p_; }
  int dimension_n() const noexcept { return dimension_n_; }
  double h_r() const noexcept { return h_r_; }
  double w0() const noexcept { return w0_; }
  double decay_A() const noexcept { return decay_A_; }
  double r_tail() const noexcept { return r_tail_; }
  double tail_amplitude() const noexcept { return tail_amplitude_; }

  std::size_t size() const noexcept { return w_.size(); }
  double r_at(std::size_t i) const noexcept { return h_r_ * static_cast<double>(i); }
  std::span<const double> w_values() const noexcept { return w_; }
  std::span<const double> w_prime_values() const noexcept { return wp_; }

  double eval_w(double r) const;
  double eval_w_prime(double r) const;
  /// log w(r), finite far beyond the range where w itself underflows.
  double log_w(double r) const;

 private:
  void hermite(double r, double* value, double* derivative) const;

  double p_;
  int dimension_n_;
  double h_r_;
  std::vector<double> w_;
  std::vector<double> wp_;
  double w0_;
  double decay_A_;
  double r_tail_;
  double tail_amplitude_;
};

/// Normalized decaying solution of the linear radial equation, see RadialProfile.
double tail_shape(int dimension_n, double r);
double tail_shape_derivative(int dimension_n, double r);
double log_tail_shape(int dimension_n, double r);

/// Shooting on w(0): bisection between overshoot (w crosses zero) and
/// undershoot (w turns back up), then a two-sided match against an inward
/// integration of the decaying tail to remove the exponential instability.
RadialProfile shoot(const Nonlinearity& nl, const ShootOptions& options = {});

struct DecayFit {
  double A = 0.0;
  double relative_spread = 0.0;
};

/// Least-squares plateau of w(r) / g_N(r) on r in [12, 18]; for N = 1 this is
/// w(r) e^r. Throws Error(decay_fit) when the relative spread exceeds 1e-2.
DecayFit fit_decay(const RadialProfile& profile);
double decay_constant(const RadialProfile& profile);

struct NormalizationConstants {
  double e1 = 0.0;     ///< 1/2 int (|grad w|^2 + w^2) - int F(w), the per-spike energy
  double gamma = 0.0;  ///< int f(w(|z|)) e^{z_1} dz
};

NormalizationConstants normalization_constants(const RadialProfile& profile);

}  // namespace spike_crown
