#include "spike_crown/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

namespace spike_crown {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap01(double t) {
  const double w = t - std::floor(t);
  return w >= 1.0 ? 0.0 : w;
}

template <class F>
double root_in(F&& f, double a, double b, double fa, double fb) {
  boost::uintmax_t iterations = 200;
  const auto tol = [](double lo, double hi) { return std::abs(hi - lo) <= 1e-15; };
  const auto [lo, hi] = boost::math::tools::toms748_solve(f, a, b, fa, fb, tol, iterations);
  return 0.5 * (lo + hi);
}

// Refines a table local minimum of |P(t) - x| by a root of (P - x) . P'.
double refine_nearest(const ConvexCurve& curve, Vec2 x, double t_left, double t_right) {
  auto g = [&](double t) {
    const CurveSample s = curve.sample(t);
    return dot(s.point - x, s.tangent);
  };
  const double ga = g(t_left), gb = g(t_right);
  if (ga == 0.0) return t_left;
  if (gb == 0.0) return t_right;
  if (ga < 0.0 && gb > 0.0) return root_in(g, t_left, t_right, ga, gb);
  auto d2 = [&](double t) { return norm2(curve.point(t) - x); };
  return boost::math::tools::brent_find_minima(d2, t_left, t_right, 52).first;
}

struct Candidate {
  double t;
  double dist;
  Vec2 point;
};

// All refined local minima of the distance from x to the curve. `flat` is set
// when the table distance is locally constant over many samples (e.g. the
// centre of a circle), in which case only the best sample is refined.
std::vector<Candidate> nearest_candidates(const ConvexCurve& curve, Vec2 x, bool* flat) {
  const auto xs = curve.table_x();
  const auto ys = curve.table_y();
  const std::size_t m = xs.size();
  std::vector<double> d2(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double dx = xs[i] - x.x, dy = ys[i] - x.y;
    d2[i] = dx * dx + dy * dy;
  }
  std::vector<std::size_t> minima;
  for (std::size_t i = 0; i < m; ++i) {
    const double prev = d2[(i + m - 1) % m], next = d2[(i + 1) % m];
    if (d2[i] <= prev && d2[i] <= next && (d2[i] < prev || d2[i] < next)) minima.push_back(i);
  }
  *flat = minima.size() > 32 || minima.empty();
  if (*flat) {
    minima.assign(1, static_cast<std::size_t>(std::min_element(d2.begin(), d2.end()) - d2.begin()));
  }
  const double dt = 1.0 / static_cast<double>(m);
  std::vector<Candidate> out;
  out.reserve(minima.size());
  for (std::size_t i : minima) {
    const double t0 = static_cast<double>(i) * dt;
    const double t = refine_nearest(curve, x, t0 - dt, t0 + dt);
    const Vec2 p = curve.point(t);
    out.push_back({wrap01(t), distance(p, x), p});
  }
  return out;
}

Candidate best_of(const std::vector<Candidate>& c) {
  return *std::min_element(c.begin(), c.end(),
                           [](const Candidate& a, const Candidate& b) { return a.dist < b.dist; });
}

}  // namespace

std::string to_string(CurveKind kind) {
  switch (kind) {
    case CurveKind::circle: return "circle";
    case CurveKind::ellipse: return "ellipse";
    case CurveKind::superellipse: return "superellipse";
    case CurveKind::spline: return "spline";
    case CurveKind::parallel: return "parallel";
  }
  return "unknown";
}

ConvexCurve::ConvexCurve(CurveKind kind, std::vector<double> params, Evaluator eval)
    : kind_(kind), params_(std::move(params)), eval_(std::make_shared<const Evaluator>(std::move(eval))) {
  build_table();
}

void ConvexCurve::build_table() {
  const std::size_t m = kTableSize;
  table_.resize(m);
  xs_.resize(m);
  ys_.resize(m);
  kappa_min_ = INFINITY;
  kappa_max_ = -INFINITY;
  for (std::size_t i = 0; i < m; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(m);
    table_[i].t = t;
    table_[i].sample = sample(t);
    xs_[i] = table_[i].sample.point.x;
    ys_[i] = table_[i].sample.point.y;
    kappa_min_ = std::min(kappa_min_, table_[i].sample.curvature);
    kappa_max_ = std::max(kappa_max_, table_[i].sample.curvature);
  }
  using Gauss = boost::math::quadrature::gauss<double, 7>;
  const auto speed = [this](double t) { return norm((*eval_)(t).d1); };
  double s = 0.0;
  double area2 = 0.0;
  Vec2 moment;
  for (std::size_t i = 0; i < m; ++i) {
    table_[i].arclength = s;
    const double a = static_cast<double>(i) / m, b = static_cast<double>(i + 1) / m;
    s += Gauss::integrate(speed, a, b);
    const Vec2 p = table_[i].sample.point, q = table_[(i + 1) % m].sample.point;
    const double c = cross(p, q);
    area2 += c;
    moment += c * (p + q);
  }
  length_ = s;
  centroid_ = (1.0 / (3.0 * area2)) * moment;
}

CurveSample ConvexCurve::sample(double t) const {
  const Derivatives d = (*eval_)(wrap01(t));
  CurveSample s;
  s.point = d.point;
  s.speed = norm(d.d1);
  s.tangent = (1.0 / s.speed) * d.d1;
  s.normal = right_perp(s.tangent);
  s.curvature = d.curvature;
  return s;
}

double ConvexCurve::arclength_at(double t) const {
  t = wrap01(t);
  const std::size_t m = table_.size();
  std::size_t i = std::min(m - 1, static_cast<std::size_t>(t * static_cast<double>(m)));
  using Gauss = boost::math::quadrature::gauss<double, 7>;
  const auto speed = [this](double u) { return norm((*eval_)(u).d1); };
  return table_[i].arclength + Gauss::integrate(speed, table_[i].t, t);
}

ConvexCurve ConvexCurve::circle(double radius, Vec2 center) {
  if (!(radius > 0.0)) fail(ErrorKind::domain, "circle radius must be positive");
  return ConvexCurve(CurveKind::circle, {radius, center.x, center.y}, [radius, center](double t) {
    const double th = kTwoPi * t;
    const double c = std::cos(th), s = std::sin(th);
    return Derivatives{center + Vec2{radius * c, radius * s}, Vec2{-kTwoPi * radius * s, kTwoPi * radius * c},
                       1.0 / radius};
  });
}

ConvexCurve ConvexCurve::ellipse(double a, double b) {
  if (!(a > 0.0 && b > 0.0)) fail(ErrorKind::domain, "ellipse semi-axes must be positive");
  return ConvexCurve(CurveKind::ellipse, {a, b}, [a, b](double t) {
    const double th = kTwoPi * t;
    const double c = std::cos(th), s = std::sin(th);
    const Vec2 d1{-kTwoPi * a * s, kTwoPi * b * c};
    const Vec2 d2{-kTwoPi * kTwoPi * a * c, -kTwoPi * kTwoPi * b * s};
    return Derivatives{{a * c, b * s}, d1, cross(d1, d2) / std::pow(norm(d1), 3)};
  });
}

ConvexCurve ConvexCurve::superellipse(double a, double b, double m) {
  if (!(a > 0.0 && b > 0.0)) fail(ErrorKind::domain, "superellipse semi-axes must be positive");
  if (!(m >= 2.0)) fail(ErrorKind::domain, "superellipse exponent must be >= 2");
  return ConvexCurve(CurveKind::superellipse, {a, b, m}, [a, b, m](double t) {
    const double th = kTwoPi * t;
    const double c = std::cos(th), s = std::sin(th);
    // S(th) = |c/a|^m + |s/b|^m, r = S^{-1/m}; derivatives in th.
    const auto g = [m](double u) { return std::pow(std::abs(u), m); };
    const auto g1 = [m](double u) { return m * std::pow(std::abs(u), m - 1.0) * (u < 0 ? -1.0 : 1.0); };
    const auto g2 = [m](double u) { return m * (m - 1.0) * std::pow(std::abs(u), m - 2.0); };
    const double ua = c / a, ub = s / b;
    const double S = g(ua) + g(ub);
    const double S1 = g1(ua) * (-s / a) + g1(ub) * (c / b);
    const double S2 = g2(ua) * (s / a) * (s / a) + g1(ua) * (-c / a) + g2(ub) * (c / b) * (c / b) +
                      g1(ub) * (-s / b);
    const double r = std::pow(S, -1.0 / m);
    const double r1 = -(1.0 / m) * std::pow(S, -1.0 / m - 1.0) * S1;
    const double r2 = -(1.0 / m) * ((-1.0 / m - 1.0) * std::pow(S, -1.0 / m - 2.0) * S1 * S1 +
                                    std::pow(S, -1.0 / m - 1.0) * S2);
    const Vec2 e{c, s}, e_perp{-s, c};
    const Vec2 p = r * e;
    const Vec2 d1 = r1 * e + r * e_perp;
    const Vec2 d2 = r2 * e + 2.0 * r1 * e_perp - r * e;
    return Derivatives{p, kTwoPi * d1, cross(d1, d2) / std::pow(norm(d1), 3)};
  });
}

ConvexCurve ConvexCurve::spline(std::vector<Vec2> pts) {
  const std::size_t n = pts.size();
  if (n < 4) fail(ErrorKind::domain, "spline boundary needs at least 4 control points");
  double area2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) area2 += cross(pts[i], pts[(i + 1) % n]);
  if (area2 < 0.0) std::reverse(pts.begin(), pts.end());
  // Periodic cubic spline: M_{j-1} + 4 M_j + M_{j+1} = 6 (P_{j+1} - 2 P_j + P_{j-1}).
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd rhs(n, 2);
  for (std::size_t j = 0; j < n; ++j) {
    A(j, (j + n - 1) % n) += 1.0;
    A(j, j) += 4.0;
    A(j, (j + 1) % n) += 1.0;
    const Vec2 d = pts[(j + 1) % n] - 2.0 * pts[j] + pts[(j + n - 1) % n];
    rhs(j, 0) = 6.0 * d.x;
    rhs(j, 1) = 6.0 * d.y;
  }
  const Eigen::MatrixXd M = A.partialPivLu().solve(rhs);
  std::vector<Vec2> second(n);
  for (std::size_t j = 0; j < n; ++j) second[j] = {M(j, 0), M(j, 1)};
  const double dn = static_cast<double>(n);
  ConvexCurve curve(CurveKind::spline, {}, [pts, second, n, dn](double t) {
    const double x = t * dn;
    std::size_t j = std::min(n - 1, static_cast<std::size_t>(x));
    const double u = x - static_cast<double>(j);
    const std::size_t k = (j + 1) % n;
    const Vec2 p = (1 - u) * pts[j] + u * pts[k] + (((1 - u) * (1 - u) * (1 - u) - (1 - u)) / 6.0) * second[j] +
                   ((u * u * u - u) / 6.0) * second[k];
    const Vec2 du = pts[k] - pts[j] + ((1.0 - 3.0 * (1 - u) * (1 - u)) / 6.0) * second[j] +
                    ((3.0 * u * u - 1.0) / 6.0) * second[k];
    const Vec2 duu = (1 - u) * second[j] + u * second[k];
    const Vec2 d1 = dn * du;
    const Vec2 d2 = (dn * dn) * duu;
    return Derivatives{p, d1, cross(d1, d2) / std::pow(norm(d1), 3)};
  });
  if (!(curve.kappa_min() > 0.0))
    fail(ErrorKind::domain, "spline boundary is not strictly convex (curvature changes sign)");
  const double margin = check_strict_convexity(curve, curve.total_length() / 64.0);
  if (!(margin > 0.0)) fail(ErrorKind::domain, "spline boundary fails the strict convexity check");
  return curve;
}

ConvexCurve inner_parallel_curve(const ConvexCurve& curve, double offset) {
  if (!(offset > 0.0)) fail(ErrorKind::precondition, "parallel-curve offset must be positive");
  if (!(offset * curve.kappa_max() < 1.0)) {
    std::ostringstream os;
    os << "offset " << offset << " reaches the focal radius 1/kappa_max = " << 1.0 / curve.kappa_max();
    fail(ErrorKind::parallel_curve_degeneracy, os.str());
  }
  auto base = curve.eval_;
  return ConvexCurve(CurveKind::parallel, {offset}, [base, offset](double t) {
    const auto d = (*base)(t);
    const Vec2 tangent = (1.0 / norm(d.d1)) * d.d1;
    const double shrink = 1.0 - offset * d.curvature;
    return ConvexCurve::Derivatives{d.point - offset * right_perp(tangent), shrink * d.d1,
                                    d.curvature / shrink};
  });
}

double curve_length(const ConvexCurve& curve) { return curve.total_length(); }

Projection project_to_curve(const ConvexCurve& curve, Vec2 x) {
  if (!std::isfinite(x.x) || !std::isfinite(x.y)) fail(ErrorKind::domain, "projection of a non-finite point");
  bool flat = false;
  const auto candidates = nearest_candidates(curve, x, &flat);
  const Candidate best = best_of(candidates);
  const double scale = std::max(1.0, best.dist);
  if (flat) fail(ErrorKind::non_unique_projection, "point is equidistant from an arc of the curve");
  for (const Candidate& c : candidates) {
    if (std::abs(c.dist - best.dist) <= 1e-9 * scale &&
        distance(c.point, best.point) > 1e-6 * curve.total_length()) {
      std::ostringstream os;
      os << "point (" << x.x << ", " << x.y << ") has two nearest boundary points";
      fail(ErrorKind::non_unique_projection, os.str());
    }
  }
  return {best.t, best.point, best.dist};
}

double signed_distance(const ConvexCurve& curve, Vec2 x) {
  if (!std::isfinite(x.x) || !std::isfinite(x.y)) fail(ErrorKind::domain, "distance of a non-finite point");
  bool flat = false;
  const Candidate best = best_of(nearest_candidates(curve, x, &flat));
  const CurveSample s = curve.sample(best.t);
  return dot(x - best.point, s.normal) < 0.0 ? -best.dist : best.dist;
}

double signed_distance(const PlanarDomain& domain, Vec2 x) { return signed_distance(domain.boundary(), x); }

PlanarDomain::PlanarDomain(ConvexCurve boundary) : boundary_(std::move(boundary)) {
  const auto xs = boundary_.table_x();
  const auto ys = boundary_.table_y();
  bbox_min_ = {*std::min_element(xs.begin(), xs.end()), *std::min_element(ys.begin(), ys.end())};
  bbox_max_ = {*std::max_element(xs.begin(), xs.end()), *std::max_element(ys.begin(), ys.end())};
  // The distance to the boundary is concave on a convex domain: pattern search.
  Vec2 c = boundary_.centroid();
  double best = -signed_distance(boundary_, c);
  double step = 0.25 * std::min(bbox_max_.x - bbox_min_.x, bbox_max_.y - bbox_min_.y);
  const Vec2 dirs[] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  while (step > 1e-12) {
    bool improved = false;
    for (const Vec2& d : dirs) {
      const Vec2 trial = c + step * d;
      const double value = -signed_distance(boundary_, trial);
      if (value > best) {
        best = value;
        c = trial;
        improved = true;
      }
    }
    if (!improved) step *= 0.5;
  }
  incenter_ = c;
  inradius_ = best;
}

namespace {

// min over Q with |P - Q| >= separation of nu_P . (P - Q), for one P.
double convexity_height(const ConvexCurve& curve, double tp, double separation) {
  const CurveSample ps = curve.sample(tp);
  const auto xs = curve.table_x();
  const auto ys = curve.table_y();
  const std::size_t m = xs.size();
  double best = INFINITY;
  auto excess = [&](double t) { return distance(curve.point(t), ps.point) - separation; };
  double prev_excess = std::hypot(xs[m - 1] - ps.point.x, ys[m - 1] - ps.point.y) - separation;
  for (std::size_t j = 0; j < m; ++j) {
    const Vec2 q{xs[j], ys[j]};
    const double e = distance(q, ps.point) - separation;
    if (e >= 0.0) best = std::min(best, dot(ps.normal, ps.point - q));
    if ((e >= 0.0) != (prev_excess >= 0.0)) {
      const double a = (static_cast<double>(j) - 1.0) / static_cast<double>(m);
      const double b = static_cast<double>(j) / static_cast<double>(m);
      const double t = root_in(excess, a, b, prev_excess, e);
      best = std::min(best, dot(ps.normal, ps.point - curve.point(t)));
    }
    prev_excess = e;
  }
  return best;
}

}  // namespace

double check_strict_convexity(const ConvexCurve& curve, double separation) {
  const std::size_t m = curve.table().size();
  double best = INFINITY;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double h = convexity_height(curve, curve.table()[i].t, separation);
    if (h < best) {
      best = h;
      arg = i;
    }
  }
  if (!std::isfinite(best)) return best;
  const double dt = 1.0 / static_cast<double>(m);
  const double t0 = static_cast<double>(arg) * dt;
  const auto refined = boost::math::tools::brent_find_minima(
      [&](double t) { return convexity_height(curve, t, separation); }, t0 - dt, t0 + dt, 40);
  return std::min(best, refined.second);
}

ContractionReport lemma_contraction_check(const ConvexCurve& curve, double separation, double eta_max,
                                          std::size_t samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ContractionReport report;
  // The slack is convex in (eta1, eta2), so each pair is also tested at the
  // corners of the eta box. Every other pair is drawn near the separation
  // threshold, where the inequality is tightest.
  const double dt = 1.0 / static_cast<double>(curve.table().size());
  while (report.samples < samples) {
    const double tp = unit(rng);
    const CurveSample p = curve.sample(tp);
    double tq = unit(rng);
    if (report.samples % 2 == 1) {
      const double target = separation * (1.0 + 0.2 * unit(rng));
      const double dir = unit(rng) < 0.5 ? 1.0 : -1.0;
      double lo = tp, hi = tp;
      while (distance(curve.point(hi), p.point) < target && std::abs(hi - tp) < 0.5) hi += dir * dt;
      if (std::abs(hi - tp) >= 0.5) continue;
      lo = hi - dir * dt;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (distance(curve.point(mid), p.point) < target ? lo : hi) = mid;
      }
      tq = hi;
    }
    const CurveSample q = curve.sample(tq);
    const double base = distance(p.point, q.point);
    if (base < separation) continue;
    const double eta1 = eta_max * unit(rng);
    const double eta2 = eta_max * unit(rng);
    if (eta1 == 0.0 && eta2 == 0.0) continue;
    const auto slack = [&](double e1, double e2) {
      return norm(p.point - e1 * p.normal - q.point + e2 * q.normal) - base;
    };
    const double worst = std::max({slack(eta1, eta2), slack(eta_max, 0.0), slack(0.0, eta_max),
                                   slack(eta_max, eta_max)});
    report.worst_slack = std::max(report.worst_slack, worst);
    if (!(worst < 0.0)) ++report.violations;
    ++report.samples;
  }
  if (report.violations > 0) {
    std::ostringstream os;
    os << report.violations << " of " << report.samples
       << " samples violate the contraction inequality (eta_max too large)";
    throw ContractionViolation(os.str(), report);
  }
  return report;
}

}  // namespace spike_crown
