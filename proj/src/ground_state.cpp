#include "spike_crown/ground_state.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "spike_crown/error.hpp"

namespace spike_crown {

namespace {

using State = std::array<double, 2>;  // (w, w')

constexpr double kInwardStart = 30.0;
constexpr double kMatchRadius = 4.0;
constexpr double kFitLow = 12.0;
constexpr double kFitHigh = 18.0;

class RadialOde {
 public:
  RadialOde(const Nonlinearity& nl) : nl_(nl), n_(nl.dimension_n()) {}

  State rhs(double r, const State& y) const {
    return {y[1], -(n_ - 1.0) / r * y[1] + y[0] - nl_.eval_f(y[0])};
  }

  // One adaptive Dormand-Prince 5(4) sweep from r0 to r1 (either direction).
  State advance(double r0, double r1, State y) const {
    const double span = r1 - r0;
    if (span == 0.0) return y;
    double h = span;
    double r = r0;
    int guard = 0;
    while ((r1 - r) * span > 0.0) {
      if (++guard > 100000) fail(ErrorKind::integration, "radial integrator step-size collapse");
      if ((r + h - r1) * span > 0.0) h = r1 - r;
      State err;
      const State next = step(r, y, h, &err);
      double norm = 0.0;
      for (int k = 0; k < 2; ++k) {
        const double scale = kAbsTol + kRelTol * std::max(std::abs(y[k]), std::abs(next[k]));
        norm = std::max(norm, std::abs(err[k]) / scale);
      }
      if (norm <= 1.0 || std::abs(h) < 1e-14) {
        r += h;
        y = next;
        const double grow = norm == 0.0 ? 5.0 : std::min(5.0, 0.9 * std::pow(norm, -0.2));
        h *= grow;
      } else {
        h *= std::max(0.1, 0.9 * std::pow(norm, -0.25));
      }
    }
    return y;
  }

 private:
  static constexpr double kRelTol = 1e-12;
  static constexpr double kAbsTol = 1e-300;

  State step(double r, const State& y, double h, State* err) const {
    auto axpy = [&](std::initializer_list<std::pair<double, const State*>> terms) {
      State out = y;
      for (const auto& [c, k] : terms)
        for (int i = 0; i < 2; ++i) out[i] += h * c * (*k)[i];
      return out;
    };
    const State k1 = rhs(r, y);
    const State k2 = rhs(r + h / 5.0, axpy({{1.0 / 5.0, &k1}}));
    const State k3 = rhs(r + 3.0 * h / 10.0, axpy({{3.0 / 40.0, &k1}, {9.0 / 40.0, &k2}}));
    const State k4 = rhs(r + 4.0 * h / 5.0,
                         axpy({{44.0 / 45.0, &k1}, {-56.0 / 15.0, &k2}, {32.0 / 9.0, &k3}}));
    const State k5 = rhs(r + 8.0 * h / 9.0, axpy({{19372.0 / 6561.0, &k1},
                                                  {-25360.0 / 2187.0, &k2},
                                                  {64448.0 / 6561.0, &k3},
                                                  {-212.0 / 729.0, &k4}}));
    const State k6 = rhs(r + h, axpy({{9017.0 / 3168.0, &k1},
                                      {-355.0 / 33.0, &k2},
                                      {46732.0 / 5247.0, &k3},
                                      {49.0 / 176.0, &k4},
                                      {-5103.0 / 18656.0, &k5}}));
    const State out = axpy({{35.0 / 384.0, &k1},
                            {500.0 / 1113.0, &k3},
                            {125.0 / 192.0, &k4},
                            {-2187.0 / 6784.0, &k5},
                            {11.0 / 84.0, &k6}});
    const State k7 = rhs(r + h, out);
    constexpr std::array<double, 7> e = {
        35.0 / 384.0 - 5179.0 / 57600.0, 0.0, 500.0 / 1113.0 - 7571.0 / 16695.0,
        125.0 / 192.0 - 393.0 / 640.0, -2187.0 / 6784.0 + 92097.0 / 339200.0,
        11.0 / 84.0 - 187.0 / 2100.0, -1.0 / 40.0};
    const std::array<const State*, 7> ks = {&k1, &k2, &k3, &k4, &k5, &k6, &k7};
    for (int i = 0; i < 2; ++i) {
      double s = 0.0;
      for (int j = 0; j < 7; ++j) s += e[j] * (*ks[j])[i];
      (*err)[i] = h * s;
    }
    return out;
  }

  const Nonlinearity& nl_;
  int n_;
};

// Series start: the (N-1)/r term is removable at the origin.
State series_start(const Nonlinearity& nl, double w0, double r) {
  const double c = (w0 - nl.eval_f(w0)) / nl.dimension_n();
  return {w0 + 0.5 * c * r * r, c * r};
}

enum class ShotOutcome { crossing, undershoot, undecided };

// Integrates outward node by node; calls visit(i, state) at each table node.
ShotOutcome shoot_outward(const RadialOde& ode, const Nonlinearity& nl, double w0, double h_r,
                          std::size_t last_node, bool classify,
                          const std::function<void(std::size_t, const State&)>& visit) {
  const double r_start = std::min(1e-4, 0.1 * h_r);
  State y = series_start(nl, w0, r_start);
  double r = r_start;
  if (visit) visit(0, State{w0, 0.0});
  for (std::size_t i = 1; i <= last_node; ++i) {
    const double r_next = h_r * static_cast<double>(i);
    y = ode.advance(r, r_next, y);
    r = r_next;
    if (visit) visit(i, y);
    if (classify) {
      if (y[0] < 0.0) return ShotOutcome::crossing;
      if (y[1] > 0.0) return ShotOutcome::undershoot;
    }
  }
  return ShotOutcome::undecided;
}

State inward_start(int n, double amplitude, double r) {
  return {amplitude * tail_shape(n, r), amplitude * tail_shape_derivative(n, r)};
}

}  // namespace

double tail_shape(int n, double r) {
  if (n == 1) return std::exp(-r);
  return std::exp(log_tail_shape(n, r));
}

double log_tail_shape(int n, double r) {
  if (n == 1) return -r;
  const double nu = 0.5 * n - 1.0;
  if (r < 600.0) {
    return 0.5 * std::log(2.0 / std::numbers::pi) - nu * std::log(r) +
           std::log(std::cyl_bessel_k(std::abs(nu), r));
  }
  // Large-argument expansion of K_nu, accurate to far below double rounding here.
  const double mu = 4.0 * nu * nu;
  const double series = 1.0 + (mu - 1.0) / (8.0 * r) + (mu - 1.0) * (mu - 9.0) / (128.0 * r * r);
  return -0.5 * (n - 1.0) * std::log(r) - r + std::log(series);
}

double tail_shape_derivative(int n, double r) {
  if (n == 1) return -std::exp(-r);
  // (r^{-nu} K_nu)' = -r^{-nu} K_{nu+1}
  const double nu = 0.5 * n - 1.0;
  if (r < 600.0) {
    return -std::sqrt(2.0 / std::numbers::pi) * std::pow(r, -nu) *
           std::cyl_bessel_k(std::abs(nu + 1.0), r);
  }
  const double mu = 4.0 * (nu + 1.0) * (nu + 1.0);
  const double series = 1.0 + (mu - 1.0) / (8.0 * r);
  return -std::exp(-0.5 * (n - 1.0) * std::log(r) - r) * series;
}

RadialProfile::RadialProfile(double p, int dimension_n, double h_r, std::vector<double> w_values,
                             std::vector<double> w_prime_values, double w0, double decay_A,
                             double r_tail)
    : p_(p),
      dimension_n_(dimension_n),
      h_r_(h_r),
      w_(std::move(w_values)),
      wp_(std::move(w_prime_values)),
      w0_(w0),
      decay_A_(decay_A),
      r_tail_(r_tail) {
  if (w_.size() != wp_.size() || w_.size() < 4 || !(h_r_ > 0.0))
    fail(ErrorKind::precondition, "radial profile table is malformed");
  if (!(r_tail_ > 0.0) || r_tail_ > r_at(w_.size() - 1))
    fail(ErrorKind::precondition, "radial profile tail radius lies outside the table");
  double w_tail = 0.0;
  hermite(r_tail_, &w_tail, nullptr);
  tail_amplitude_ = w_tail / tail_shape(dimension_n_, r_tail_);
}

void RadialProfile::hermite(double r, double* value, double* derivative) const {
  const std::size_t last = w_.size() - 1;
  std::size_t i = static_cast<std::size_t>(r / h_r_);
  if (i >= last) i = last - 1;
  const double t = (r - r_at(i)) / h_r_;
  const double y0 = w_[i], y1 = w_[i + 1];
  const double m0 = wp_[i] * h_r_, m1 = wp_[i + 1] * h_r_;
  const double t2 = t * t, t3 = t2 * t;
  if (value) {
    *value = (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * y1 +
             (t3 - t2) * m1;
  }
  if (derivative) {
    *derivative = ((6 * t2 - 6 * t) * y0 + (3 * t2 - 4 * t + 1) * m0 + (-6 * t2 + 6 * t) * y1 +
                   (3 * t2 - 2 * t) * m1) /
                  h_r_;
  }
}

double RadialProfile::eval_w(double r) const {
  if (!(r >= 0.0)) fail(ErrorKind::domain, "ground state evaluated at negative radius");
  if (r <= r_tail_) {
    double v;
    hermite(r, &v, nullptr);
    return v;
  }
  return tail_amplitude_ * tail_shape(dimension_n_, r);
}

double RadialProfile::eval_w_prime(double r) const {
  if (!(r >= 0.0)) fail(ErrorKind::domain, "ground state evaluated at negative radius");
  if (r <= r_tail_) {
    double d;
    hermite(r, nullptr, &d);
    return d;
  }
  return tail_amplitude_ * tail_shape_derivative(dimension_n_, r);
}

double RadialProfile::log_w(double r) const {
  if (!(r >= 0.0)) fail(ErrorKind::domain, "ground state evaluated at negative radius");
  if (r <= r_tail_) return std::log(eval_w(r));
  return std::log(tail_amplitude_) + log_tail_shape(dimension_n_, r);
}

RadialProfile shoot(const Nonlinearity& nl, const ShootOptions& options) {
  if (!(options.tol > 0.0)) fail(ErrorKind::precondition, "shooting tolerance must be positive");
  if (!(options.h_r > 0.0) || !(options.r_max > options.r_tail))
    fail(ErrorKind::precondition, "invalid radial table layout");
  const RadialOde ode(nl);
  const int n = nl.dimension_n();
  const double h = options.h_r;
  const auto node_of = [h](double r) { return static_cast<std::size_t>(std::llround(r / h)); };
  const std::size_t classify_end = node_of(25.0);

  double lo = 0.1;
  double hi = 10.0;
  if (shoot_outward(ode, nl, lo, h, classify_end, true, {}) != ShotOutcome::undershoot ||
      shoot_outward(ode, nl, hi, h, classify_end, true, {}) != ShotOutcome::crossing) {
    std::ostringstream os;
    os << "no ground-state bracket in w(0) in [0.1, 10] for p = " << nl.p()
       << ", N = " << n;
    fail(ErrorKind::no_ground_state, os.str());
  }
  int iterations = 0;
  while (true) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // bracket at machine resolution
    const ShotOutcome outcome = shoot_outward(ode, nl, mid, h, classify_end, true, {});
    if (outcome == ShotOutcome::undecided) {
      lo = hi = mid;
      break;
    }
    (outcome == ShotOutcome::crossing ? hi : lo) = mid;
    if (++iterations > options.max_iterations) break;
  }
  if (hi - lo >= options.tol) {
    std::ostringstream os;
    os << "bisection bracket width " << hi - lo << " did not reach tolerance " << options.tol;
    fail(ErrorKind::iteration, os.str());
  }

  // Two-sided match: outward from the origin, inward from the decaying tail.
  const std::size_t match = node_of(kMatchRadius);
  const double inward_r = kInwardStart;
  auto outward_at_match = [&](double w0) {
    State s{};
    shoot_outward(ode, nl, w0, h, match, false,
                  [&](std::size_t i, const State& y) { if (i == match) s = y; });
    return s;
  };
  auto inward_at_match = [&](double amplitude) {
    return ode.advance(inward_r, h * static_cast<double>(match), inward_start(n, amplitude, inward_r));
  };

  double w0 = 0.5 * (lo + hi);
  double amplitude = 0.0;
  {
    State probe{};
    const std::size_t probe_node = node_of(8.0);
    shoot_outward(ode, nl, w0, h, probe_node, false,
                  [&](std::size_t i, const State& y) { if (i == probe_node) probe = y; });
    amplitude = probe[0] / tail_shape(n, 8.0);
  }
  for (int it = 0; it < 30; ++it) {
    const State a = outward_at_match(w0);
    const State b = inward_at_match(amplitude);
    const double r0 = a[0] - b[0];
    const double r1 = a[1] - b[1];
    if (std::abs(r0) + std::abs(r1) < 1e-14 * w0) break;
    const double dw = 1e-7 * w0;
    const double dc = 1e-7 * amplitude;
    const State aw = outward_at_match(w0 + dw);
    const State bc = inward_at_match(amplitude + dc);
    // Jacobian of (a - b) with respect to (w0, amplitude).
    const double j00 = (aw[0] - a[0]) / dw, j10 = (aw[1] - a[1]) / dw;
    const double j01 = -(bc[0] - b[0]) / dc, j11 = -(bc[1] - b[1]) / dc;
    const double det = j00 * j11 - j01 * j10;
    if (det == 0.0) fail(ErrorKind::iteration, "singular matching Jacobian");
    w0 -= (j11 * r0 - j01 * r1) / det;
    amplitude -= (-j10 * r0 + j00 * r1) / det;
    if (it == 29) fail(ErrorKind::iteration, "tail matching did not converge");
  }

  const std::size_t last = node_of(options.r_max);
  std::vector<double> w(last + 1), wp(last + 1);
  shoot_outward(ode, nl, w0, h, match, false, [&](std::size_t i, const State& y) {
    w[i] = y[0];
    wp[i] = y[1];
  });
  State y = inward_start(n, amplitude, inward_r);
  double r = inward_r;
  for (std::size_t i = node_of(inward_r); i > match; --i) {
    const double target = h * static_cast<double>(i);
    y = ode.advance(r, target, y);
    r = target;
    if (i <= last) {
      w[i] = y[0];
      wp[i] = y[1];
    }
  }
  wp[0] = 0.0;
  for (std::size_t i = 0; i <= last; ++i) {
    if (!(w[i] > 0.0) || (i > 0 && !(w[i] < w[i - 1])))
      fail(ErrorKind::iteration, "shot profile is not positive and decreasing");
  }

  RadialProfile provisional(nl.p(), n, h, w, wp, w0, 0.0, options.r_tail);
  const DecayFit fit = fit_decay(provisional);
  return RadialProfile(nl.p(), n, h, std::move(w), std::move(wp), w0, fit.A, options.r_tail);
}

DecayFit fit_decay(const RadialProfile& profile) {
  const int n = profile.dimension_n();
  const auto w = profile.w_values();
  double sum = 0.0, lo = INFINITY, hi = -INFINITY;
  int count = 0;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    const double r = profile.r_at(i);
    if (r < kFitLow - 1e-12 || r > kFitHigh + 1e-12) continue;
    const double q = w[i] / tail_shape(n, r);
    sum += q;
    lo = std::min(lo, q);
    hi = std::max(hi, q);
    ++count;
  }
  if (count < 2) fail(ErrorKind::decay_fit, "radial table does not cover the decay fit window");
  DecayFit fit;
  fit.A = sum / count;  // least-squares constant
  fit.relative_spread = (hi - lo) / fit.A;
  if (!(fit.relative_spread <= 1e-2)) {
    std::ostringstream os;
    os << "decay plateau spread " << fit.relative_spread << " signals an unconverged shot";
    fail(ErrorKind::decay_fit, os.str());
  }
  return fit;
}

double decay_constant(const RadialProfile& profile) { return fit_decay(profile).A; }

namespace {

// log of the angular integral of e^{r cos(theta)} over the unit sphere S^{N-1}.
double log_exponential_weight(int n, double r) {
  if (n == 1) return r + std::log1p(std::exp(-2.0 * r));
  const double nu = 0.5 * n - 1.0;
  const double prefactor = 0.5 * n * std::log(2.0 * std::numbers::pi) - nu * std::log(r);
  if (r < 500.0) return prefactor + std::log(std::cyl_bessel_i(nu, r));
  return prefactor + r - 0.5 * std::log(2.0 * std::numbers::pi * r);
}

double sphere_area(int n) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

}  // namespace

NormalizationConstants normalization_constants(const RadialProfile& profile) {
  const Nonlinearity nl(profile.p(), profile.dimension_n());
  const int n = profile.dimension_n();
  const double p = profile.p();
  const double area = sphere_area(n);
  const double r_cut = std::clamp(40.0 / (p - 2.0), 40.0, 650.0);

  auto energy_density = [&](double r) {
    const double w = profile.eval_w(r);
    const double wp = profile.eval_w_prime(r);
    return area * std::pow(r, n - 1.0) * (0.5 * (wp * wp + w * w) - nl.eval_F(w));
  };
  auto gamma_density = [&](double r) {
    if (r == 0.0) return n == 1 ? 2.0 * nl.eval_f(profile.w0()) : 0.0;
    const double log_fw = (p - 1.0) * profile.log_w(r);
    return std::exp(log_fw + log_exponential_weight(n, r) + (n - 1.0) * std::log(r));
  };

  using Cell = boost::math::quadrature::gauss<double, 10>;
  using Adaptive = boost::math::quadrature::gauss_kronrod<double, 31>;
  NormalizationConstants out;
  // Table region: the interpolant is cubic per cell, so integrate cell by cell.
  const double h = profile.h_r();
  const std::size_t cells = static_cast<std::size_t>(std::llround(profile.r_tail() / h));
  for (std::size_t i = 0; i < cells; ++i) {
    const double a = h * static_cast<double>(i), b = a + h;
    out.e1 += Cell::integrate(energy_density, a, b);
    out.gamma += Cell::integrate(gamma_density, a, b);
  }
  double err_e = 0.0, err_g = 0.0;
  const double tail_e = Adaptive::integrate(energy_density, profile.r_tail(), r_cut, 20, 1e-13, &err_e);
  const double tail_g = Adaptive::integrate(gamma_density, profile.r_tail(), r_cut, 20, 1e-13, &err_g);
  if (!std::isfinite(tail_e) || !std::isfinite(tail_g) || err_g > 1e-8 * std::abs(out.gamma + tail_g))
    fail(ErrorKind::integration, "normalization quadrature did not converge");
  out.e1 += tail_e;
  out.gamma += tail_g;
  if (!(out.gamma > 0.0)) fail(ErrorKind::integration, "gamma must be positive");
  return out;
}

}  // namespace spike_crown
