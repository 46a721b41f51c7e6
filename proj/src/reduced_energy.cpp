#include "spike_crown/reduced_energy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "spike_crown/error.hpp"

namespace spike_crown {

namespace {

ConvexCurve checked_inner_curve(const PlanarDomain& dom, double delta) {
  if (!(delta > 0.0)) fail(ErrorKind::precondition, "crown distance must be positive");
  return inner_parallel_curve(dom.boundary(), delta);
}

double depth_of(const ReducedEnergyModel& model, Vec2 p) { return -signed_distance(model.domain(), p); }

// log(e^a + e^b)
double log_add(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

EnergyValue evaluate_unchecked(const ReducedEnergyModel& model, const std::vector<Vec2>& pts) {
  const double eps = model.epsilon();
  EnergyValue out;
  out.log_scale = 2.0 * model.delta() / eps;
  EnergyBreakdown& b = out.breakdown;
  const int k = static_cast<int>(pts.size());
  for (int i = 0; i < k; ++i) {
    const double lt = std::log(0.5) - psi_eps(model, pts[static_cast<std::size_t>(i)]) / eps;
    b.terms.push_back({i, -1, 1, lt});
    b.log_boundary = log_add(b.log_boundary, lt);
  }
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const double r = distance(pts[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(j)]) / eps;
      const double lt = model.profile().log_w(r);
      const bool same = (i + j) % 2 == 0;
      b.terms.push_back({i, j, same ? -1 : 1, lt});
      (same ? b.log_attractive : b.log_repulsive) = log_add(same ? b.log_attractive : b.log_repulsive, lt);
    }
  const double pos = log_add(b.log_boundary, b.log_repulsive), neg = b.log_attractive;
  if (pos == neg) {
    out.sign = 0;
    out.cancellation = pos != -INFINITY;
    return out;
  }
  const double hi = std::max(pos, neg);
  const double ratio = std::exp(-std::abs(pos - neg));
  out.sign = pos > neg ? 1 : -1;
  out.log_abs = hi + std::log1p(-ratio);
  out.cancellation = neg != -INFINITY && 1.0 - ratio <= 1e-12;
  return out;
}

double scaled_unchecked(const ReducedEnergyModel& model, const std::vector<Vec2>& pts) {
  return evaluate_unchecked(model, pts).scaled();
}

std::vector<double> gradient_unchecked(const ReducedEnergyModel& model, std::vector<Vec2> pts) {
  const double step = std::max(1e-7, 1e-5 * model.epsilon());
  std::vector<double> g(2 * pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int l = 0; l < 2; ++l) {
      double& c = l == 0 ? pts[i].x : pts[i].y;
      const double keep = c;
      c = keep + step;
      const double up = scaled_unchecked(model, pts);
      c = keep - step;
      const double down = scaled_unchecked(model, pts);
      c = keep;
      g[2 * i + static_cast<std::size_t>(l)] = (up - down) / (2.0 * step);
    }
  return g;
}

struct Shape {
  double min_chord = INFINITY, min_depth = INFINITY;
  double depth_deviation = 0.0, chord_deviation = 0.0;
};

Shape shape_of(const ReducedEnergyModel& model, const std::vector<Vec2>& pts) {
  Shape s;
  const std::size_t k = pts.size();
  for (std::size_t i = 0; i < k; ++i) {
    const double d = depth_of(model, pts[i]);
    s.min_depth = std::min(s.min_depth, d);
    s.depth_deviation = std::max(s.depth_deviation, std::abs(d - model.delta()));
    if (k < 2) continue;
    const double c = distance(pts[i], pts[(i + 1) % k]);
    s.min_chord = std::min(s.min_chord, c);
    s.chord_deviation = std::max(s.chord_deviation, std::abs(c - 2.0 * model.delta()));
  }
  return s;
}

bool member_quietly(const ReducedEnergyModel& model, const std::vector<Vec2>& pts) {
  SpikeConfiguration c;
  c.points = pts;
  try {
    return configuration_set_membership(model, c).member;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

const char* to_string(EnergyForm form) { return form == EnergyForm::leading ? "leading" : "psi_numeric"; }

const char* to_string(MembershipFailure f) {
  switch (f) {
    case MembershipFailure::none: return "none";
    case MembershipFailure::depth: return "depth";
    case MembershipFailure::order: return "order";
    case MembershipFailure::chord: return "chord";
  }
  return "unknown";
}

ReducedEnergyModel::ReducedEnergyModel(PlanarDomain dom, RadialProfile profile, double epsilon, EnergyForm form,
                                       double eta, double delta, std::shared_ptr<const Grid2D> grid, bool diagnostic)
    : dom_(std::move(dom)),
      profile_(std::move(profile)),
      epsilon_(epsilon),
      form_(form),
      eta_(eta),
      delta_(delta),
      grid_(std::move(grid)),
      diagnostic_(diagnostic),
      inner_(checked_inner_curve(dom_, delta)) {
  if (!(epsilon > 0.0)) fail(ErrorKind::precondition, "epsilon must be positive");
  if (!diagnostic && epsilon > delta / 5.0) {
    std::ostringstream os;
    os << "epsilon " << epsilon << " exceeds delta/5 = " << delta / 5.0;
    fail(ErrorKind::precondition, os.str());
  }
  if (!(eta > 0.0 && eta < delta / 2.0)) fail(ErrorKind::precondition, "eta must lie in (0, delta/2)");
  if (form == EnergyForm::psi_numeric) {
    if (!grid_) fail(ErrorKind::precondition, "psi_numeric needs a grid");
    if (grid_->h() > 0.25 * epsilon * (1.0 + 1e-12)) fail(ErrorKind::precondition, "grid spacing exceeds epsilon/4");
  }
}

double EnergyValue::scaled() const {
  if (sign == 0) return 0.0;
  return sign * std::exp(log_abs + log_scale);
}

double psi_eps(const ReducedEnergyModel& model, Vec2 p) {
  const double d = depth_of(model, p);
  if (!(d > 0.0) || (!model.diagnostic() && d < model.eta())) {
    std::ostringstream os;
    os << "point at distance " << d << " from the boundary, below eta = " << model.eta();
    fail(ErrorKind::precondition, os.str());
  }
  if (model.form() == EnergyForm::leading) return 2.0 * d;
  return solve_projection(model.grid(), model.profile(), model.epsilon(), p).psi;
}

Membership configuration_set_membership(const ReducedEnergyModel& model, const SpikeConfiguration& config) {
  Membership m;
  const auto& pts = config.points;
  const std::size_t k = pts.size();
  const double delta = model.delta(), eta = model.eta();
  std::ostringstream os;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = depth_of(model, pts[i]);
    if (!(d > delta - eta && d < delta + eta)) {
      m.failure = MembershipFailure::depth;
      m.index = static_cast<int>(i);
      m.value = d;
      os << "point " << i << " at depth " << d << " outside (" << delta - eta << ", " << delta + eta << ")";
      m.detail = os.str();
      return m;
    }
  }
  if (k >= 2) {
    std::vector<double> t(k);
    for (std::size_t i = 0; i < k; ++i) t[i] = project_to_curve(model.crown_curve(), pts[i]).t;
    // Forward gaps of a once-winding strictly ordered sequence sum to one.
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double gap = t[(i + 1) % k] - t[i];
      gap -= std::floor(gap);
      total += gap;
      if (!(gap > 1e-12)) {
        m.failure = MembershipFailure::order;
        m.index = static_cast<int>(i);
        m.partner = static_cast<int>((i + 1) % k);
        m.value = gap;
        os << "projections of points " << i << " and " << (i + 1) % k << " coincide";
        m.detail = os.str();
        return m;
      }
    }
    if (std::abs(total - 1.0) > 1e-9) {
      m.failure = MembershipFailure::order;
      m.value = total;
      os << "projections wind " << total << " times around the crown curve";
      m.detail = os.str();
      return m;
    }
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const double c = distance(pts[i], pts[j]);
      if (!(c > 2.0 * delta - eta)) {
        m.failure = MembershipFailure::chord;
        m.index = static_cast<int>(i);
        m.partner = static_cast<int>(j);
        m.value = c;
        os << "points " << i << " and " << j << " at distance " << c << " <= " << 2.0 * delta - eta;
        m.detail = os.str();
        return m;
      }
    }
  m.member = true;
  return m;
}

EnergyValue evaluate_M(const ReducedEnergyModel& model, const SpikeConfiguration& config) {
  if (config.k() == 0) fail(ErrorKind::precondition, "empty configuration");
  if (!model.diagnostic()) {
    const Membership m = configuration_set_membership(model, config);
    if (!m) fail(ErrorKind::precondition, "configuration outside the crown neighbourhood: " + m.detail);
  }
  return evaluate_unchecked(model, config.points);
}

std::vector<double> gradient_M(const ReducedEnergyModel& model, const SpikeConfiguration& config) {
  evaluate_M(model, config);
  return gradient_unchecked(model, config.points);
}

MinimizeResult minimize_in_U(const ReducedEnergyModel& model, const SpikeConfiguration& init,
                             const MinimizeOptions& options) {
  {
    const Membership m = configuration_set_membership(model, init);
    if (!m) fail(ErrorKind::precondition, "initial configuration outside the crown neighbourhood: " + m.detail);
  }
  const std::size_t k = init.k();
  const auto n = static_cast<Eigen::Index>(2 * k);
  auto to_points = [&](const Eigen::VectorXd& x) {
    std::vector<Vec2> p(k);
    for (std::size_t i = 0; i < k; ++i) p[i] = {x[2 * static_cast<Eigen::Index>(i)], x[2 * static_cast<Eigen::Index>(i) + 1]};
    return p;
  };
  auto grad = [&](const Eigen::VectorXd& x) {
    const std::vector<double> g = gradient_unchecked(model, to_points(x));
    return Eigen::Map<const Eigen::VectorXd>(g.data(), n).eval();
  };

  MinimizeResult out;
  Eigen::VectorXd x(n);
  for (std::size_t i = 0; i < k; ++i) {
    x[2 * static_cast<Eigen::Index>(i)] = init.points[i].x;
    x[2 * static_cast<Eigen::Index>(i) + 1] = init.points[i].y;
  }
  EnergyValue value = evaluate_unchecked(model, to_points(x));
  double f = value.scaled();
  Eigen::VectorXd g = grad(x);
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  bool scaled_hessian = false;
  auto record = [&](int it) {
    const Shape s = shape_of(model, to_points(x));
    out.trace.push_back({it, value.log_abs, g.norm(), s.min_chord, s.min_depth});
  };
  record(0);

  int it = 0, flat = 0;
  for (; it < options.max_iterations && g.norm() >= options.gradient_tolerance; ++it) {
    if (flat >= 3) {
      out.stalled = true;
      break;
    }
    Eigen::VectorXd d = -hinv * g;
    if (!(g.dot(d) < 0.0)) {
      hinv.setIdentity();
      scaled_hessian = false;
      d = -g;
    }
    // First trial moves no point by more than eta/4.
    double largest = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      largest = std::max(largest, std::hypot(d[2 * static_cast<Eigen::Index>(i)], d[2 * static_cast<Eigen::Index>(i) + 1]));
    double alpha = std::min(1.0, 0.25 * model.eta() / largest);
    bool any_member = false, accepted = false;
    Eigen::VectorXd x_new;
    double f_new = f;
    EnergyValue v_new;
    for (int h = 0; h <= options.max_halvings; ++h, alpha *= 0.5) {
      x_new = x + alpha * d;
      const std::vector<Vec2> pts = to_points(x_new);
      if (!member_quietly(model, pts)) continue;
      any_member = true;
      v_new = evaluate_unchecked(model, pts);
      f_new = v_new.scaled();
      if (f_new <= f + 1e-4 * alpha * g.dot(d)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!any_member) {
        std::ostringstream os;
        os << "every halving of the descent step leaves the crown neighbourhood (iteration " << it << ")";
        fail(ErrorKind::boundary_trapped, os.str());
      }
      out.stalled = true;
      break;
    }
    flat = f - f_new <= 1e-14 * std::abs(f) ? flat + 1 : 0;
    const Eigen::VectorXd g_new = grad(x_new);
    const Eigen::VectorXd s = x_new - x, y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 0.0) {
      if (!scaled_hessian) {
        hinv *= sy / y.dot(y);
        scaled_hessian = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
      hinv = (id - rho * s * y.transpose()) * hinv * (id - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    x = x_new;
    g = g_new;
    f = f_new;
    value = v_new;
    record(it + 1);
  }

  out.config.points = to_points(x);
  out.log_M = value.log_abs;
  out.grad_norm = g.norm();
  out.iterations = it;
  out.converged = out.grad_norm < options.gradient_tolerance;
  const Shape s = shape_of(model, out.config.points);
  out.depth_deviation = s.depth_deviation;
  out.chord_deviation = s.chord_deviation;
  const double tau = 5.0 * model.epsilon();
  out.location_check = out.depth_deviation <= tau && out.chord_deviation <= tau;
  return out;
}

}  // namespace spike_crown
