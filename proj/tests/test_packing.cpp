#include <chrono>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "doctest.h"
#include "spike_crown/packing.hpp"

using namespace spike_crown;

namespace {

constexpr double kPi = std::numbers::pi;

double circle_law(double r, std::size_t k) {
  const double s = std::sin(kPi / static_cast<double>(k));
  return r * s / (1.0 + s);
}

// Independent ellipse oracle: closed-form offset points, marching by a fixed
// angular scan plus bisection, bisection on the chord, scan-and-golden over
// the start angle (the closing chord is even and pi-periodic in it), and
// Illinois regula falsi on delta.
struct EllipseOracle {
  double a, b;
  std::size_t k;

  Vec2 at(double delta, double th) const {
    const double c = std::cos(th), s = std::sin(th);
    Vec2 n{b * c, a * s};
    n = (1.0 / norm(n)) * n;
    return Vec2{a * c, b * s} - delta * n;
  }
  double step(double delta, double th, double chord) const {
    const Vec2 p = at(delta, th);
    double lo = th, hi = th;
    while (distance(at(delta, hi), p) < chord) lo = hi, hi += 2e-3;
    for (int i = 0; i < 55; ++i) {
      const double mid = 0.5 * (lo + hi);
      (distance(at(delta, mid), p) < chord ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
  double closing(double delta, double th0) const {
    double lo = 0.0, hi = 2.0 * kPi * a / static_cast<double>(k);
    for (int i = 0; i < 55; ++i) {
      const double c = 0.5 * (lo + hi);
      double th = th0;
      bool far = false;
      for (std::size_t j = 0; j < k && !far; ++j) {
        th = step(delta, th, c);
        far = th - th0 >= 2 * kPi;
      }
      (far ? hi : lo) = c;
    }
    return 0.5 * (lo + hi);
  }
  // Full start-angle scan on the first call; later calls refine around the
  // previous maximizer, which moves continuously with delta.
  mutable double last_arg = -1.0;
  double widest(double delta) const {
    const double grid = 2 * kPi * 1e-3;
    double best = -1.0, arg = last_arg;
    if (last_arg < 0.0) {
      for (double th = 0.0; th <= 0.5 * kPi + 1e-12; th += grid) {
        const double c = closing(delta, th);
        if (c > best) best = c, arg = th;
      }
    } else {
      for (double th = last_arg - 5 * grid; th <= last_arg + 5 * grid; th += grid) {
        const double c = closing(delta, th);
        if (c > best) best = c, arg = th;
      }
    }
    double lo = arg - grid, hi = arg + grid;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int i = 0; i < 40; ++i) {
      const double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
      if (closing(delta, x1) > closing(delta, x2))
        hi = x2;
      else
        lo = x1;
    }
    last_arg = 0.5 * (lo + hi);
    return std::max(best, closing(delta, last_arg));
  }
  double critical_delta(double lo, double hi) const {
    double glo = 0.5 * widest(lo) - lo, ghi = 0.5 * widest(hi) - hi;
    int side = 0;
    for (int i = 0; i < 60 && hi - lo > 1e-12; ++i) {
      const double m = (lo * ghi - hi * glo) / (ghi - glo);
      const double gm = 0.5 * widest(m) - m;
      if ((gm > 0) == (glo > 0)) {
        lo = m, glo = gm;
        if (side == -1) ghi *= 0.5;
        side = -1;
      } else {
        hi = m, ghi = gm;
        if (side == 1) glo *= 0.5;
        side = 1;
      }
      if (std::abs(gm) < 1e-14) return m;
    }
    return 0.5 * (lo + hi);
  }
};

SpikeConfiguration ring(std::size_t k, double r) {
  SpikeConfiguration c;
  for (std::size_t i = 0; i < k; ++i) {
    const double th = 2 * kPi * static_cast<double>(i) / static_cast<double>(k);
    c.points.push_back({r * std::cos(th), r * std::sin(th)});
  }
  return c;
}

}  // namespace

TEST_CASE("phi_k examples") {
  const PlanarDomain disk(ConvexCurve::circle(1.0));
  CHECK(phi_k(disk, ring(4, 0.8)) == doctest::Approx(0.2).epsilon(1e-10));
  CHECK(phi_k(disk, ring(2, 0.5)) == doctest::Approx(0.5).epsilon(1e-10));
  SpikeConfiguration on_boundary = ring(4, 0.5);
  on_boundary.points[2] = {-1.0, 0.0};
  CHECK(std::abs(phi_k(disk, on_boundary)) < 1e-12);

  // Brute force over pairs for an irregular configuration.
  SpikeConfiguration irr;
  irr.points = {{0.6, 0.1}, {0.1, 0.5}, {-0.4, 0.3}, {-0.2, -0.6}, {0.3, -0.45}, {0.55, -0.2}};
  double brute = INFINITY;
  for (const Vec2& p : irr.points) brute = std::min(brute, 1.0 - norm(p));
  for (const Vec2& p : irr.points)
    for (const Vec2& q : irr.points)
      if (&p != &q) brute = std::min(brute, 0.5 * distance(p, q));
  CHECK(phi_k(disk, irr) == doctest::Approx(brute).epsilon(1e-10));
}

TEST_CASE("configuration validation") {
  const PlanarDomain disk(ConvexCurve::circle(1.0));
  CHECK_NOTHROW(validate_configuration(disk, ring(8, 0.7)));
  CHECK_THROWS_AS(validate_configuration(disk, ring(7, 0.7)), Error);
  CHECK_THROWS_AS(validate_configuration(disk, ring(8, 1.2)), Error);
  SpikeConfiguration swapped = ring(8, 0.7);
  std::swap(swapped.points[1], swapped.points[2]);
  CHECK_THROWS_AS(validate_configuration(disk, swapped), Error);
  CHECK(SpikeConfiguration::sign(0) == 1);
  CHECK(SpikeConfiguration::sign(3) == -1);
}

TEST_CASE("equal-chord marching") {
  const auto circle = ConvexCurve::circle(0.7);
  const double regular = 2 * 0.7 * std::sin(kPi / 8);
  const ChordPolygon closed = equal_chord_polygon(circle, 8, regular, 0.0);
  CHECK(std::abs(closed.closure_defect) < 1e-9);
  CHECK(closed.points.size() == 8);

  const ChordPolygon gap = equal_chord_polygon(circle, 8, 0.9 * regular, 0.1);
  CHECK(gap.closure_defect < 0.0);
  for (std::size_t i = 0; i + 1 < gap.points.size(); ++i)
    CHECK(distance(gap.points[i], gap.points[i + 1]) == doctest::Approx(0.9 * regular).epsilon(1e-12));

  try {
    equal_chord_polygon(circle, 8, 1.45, 0.0);
    FAIL("expected chord-infeasible");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::chord_infeasible);
  }
}

TEST_CASE("closed equal-chord polygons") {
  const auto circle = ConvexCurve::circle(0.7);
  const ClosedPolygon oct = close_polygon(circle, 8, 0.0);
  CHECK(oct.monotone);
  CHECK(oct.polygon.chord == doctest::Approx(1.4 * std::sin(kPi / 8)).epsilon(1e-12));
  CHECK(std::abs(oct.polygon.chord - 0.535757) < 1e-6);
  CHECK(close_polygon(circle, 3, 0.2).polygon.chord == doctest::Approx(std::sqrt(3.0) * 0.7).epsilon(1e-12));
  CHECK_THROWS_AS(close_polygon(circle, 2, 0.0), Error);

  const auto inner = inner_parallel_curve(ConvexCurve::ellipse(2.0, 1.0), 0.2);
  const ClosedPolygon hex = close_polygon(inner, 6, 0.13);
  CHECK(hex.monotone);
  const auto& pts = hex.polygon.points;
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::abs(distance(pts[i], pts[(i + 1) % 6]) - hex.polygon.chord) < 1e-9);
    CHECK(std::abs(signed_distance(inner, pts[i])) < 1e-9);
  }
  CHECK(std::abs(hex.polygon.closure_defect) < 1e-9);
}

TEST_CASE("closing chord depends on the start parameter off the circle") {
  // Rotation invariance on the circle.
  const auto circle = ConvexCurve::circle(1.3);
  const double c0 = close_polygon(circle, 10, 0.0).polygon.chord;
  for (double t0 : {0.013, 0.31, 0.77}) CHECK(std::abs(close_polygon(circle, 10, t0).polygon.chord - c0) < 1e-10);

  // On an ellipse every start closes, with start-dependent chords; the widest
  // dominates them all.
  const auto inner = inner_parallel_curve(ConvexCurve::ellipse(2.0, 1.0), 0.2);
  const MaxClosedPolygon widest = max_closed_polygon(inner, 6);
  double lo = INFINITY, hi = -INFINITY;
  for (int i = 0; i < 24; ++i) {
    const ClosedPolygon p = close_polygon(inner, 6, i / 24.0);
    CHECK(std::abs(p.polygon.closure_defect) < 1e-9);
    lo = std::min(lo, p.polygon.chord);
    hi = std::max(hi, p.polygon.chord);
    CHECK(p.polygon.chord <= widest.polygon.chord + 1e-12);
  }
  CHECK(hi - lo > 1e-2);
}

TEST_CASE("optimal delta on circles") {
  const PlanarDomain disk(ConvexCurve::circle(1.0));
  const OptimalPacking p8 = optimal_delta(disk, 8);
  CHECK(std::abs(p8.delta - circle_law(1, 8)) < 1e-8 * circle_law(1, 8));
  CHECK(std::abs(p8.delta - 0.27677) < 1e-5);
  const OptimalPacking p16 = optimal_delta(disk, 16);
  CHECK(std::abs(p16.delta - 0.163244) < 1e-6);
  CHECK_THROWS_AS(optimal_delta(disk, 7), Error);

  for (double r : {0.5, 1.0, 2.0, 3.7}) {
    const PlanarDomain dom(ConvexCurve::circle(r, {0.3, -0.2}));
    for (std::size_t k = 4; k <= 64; k += (r == 1.0 ? 2 : 10)) {
      const OptimalPacking p = optimal_delta(dom, k);
      CHECK(std::abs(p.delta - circle_law(r, k)) < 1e-8 * circle_law(r, k));
      for (std::size_t i = 0; i < k; ++i) {
        CHECK(std::abs(distance(p.config.points[i], p.config.points[(i + 1) % k]) - 2 * p.delta) < 1e-8);
        CHECK(std::abs(signed_distance(dom, p.config.points[i]) + p.delta) < 1e-9);
      }
      CHECK_NOTHROW(validate_configuration(dom, p.config));
    }
  }
}

TEST_CASE("optimal delta on an ellipse against the grid oracle") {
  const PlanarDomain dom(ConvexCurve::ellipse(2.0, 1.0));
  const auto t0 = std::chrono::steady_clock::now();
  const OptimalPacking p = optimal_delta(dom, 10);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("ellipse k=10 delta* = " << p.delta << " in " << secs << " s");
  const EllipseOracle oracle{2.0, 1.0, 10};
  const double ref = oracle.critical_delta(0.25, 0.4);
  CHECK(std::abs(p.delta - ref) < 1e-6);
  const auto& pts = p.config.points;
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(std::abs(distance(pts[i], pts[(i + 1) % 10]) - 2 * p.delta) < 1e-8);
    for (std::size_t j = i + 2; j < 10; ++j)
      if (!(i == 0 && j == 9)) CHECK(distance(pts[i], pts[j]) > 2 * p.delta);
  }
  CHECK(phi_k(dom, p.config) == doctest::Approx(p.delta).epsilon(1e-8));
}

TEST_CASE("maximality of the crown") {
  for (const auto& curve : {ConvexCurve::circle(1.0), ConvexCurve::ellipse(1.5, 1.0)}) {
    const PlanarDomain dom(curve);
    const OptimalPacking p = optimal_delta(dom, 8);
    const ConvexCurve inner = inner_parallel_curve(curve, p.delta);
    const double ell = inner.total_length();
    for (std::size_t i = 0; i < 8; ++i) {
      for (double sgn : {-1.0, 1.0}) {
        // 1e-3 arclength along the inner curve, to first order in the parameter.
        const double dt = sgn * 1e-3 / (inner.sample(p.boundary_params[i]).speed);
        SpikeConfiguration moved = p.config;
        moved.points[i] = inner.point(p.boundary_params[i] + dt);
        const double a = distance(moved.points[i], moved.points[(i + 1) % 8]);
        const double b = distance(moved.points[i], moved.points[(i + 7) % 8]);
        CHECK(0.5 * std::min(a, b) < p.delta);
        CHECK(phi_k(dom, moved) < p.delta);
      }
    }
    (void)ell;
  }
}

TEST_CASE("choose k") {
  const PlanarDomain disk(ConvexCurve::circle(1.0));
  CHECK(choose_k(disk, 0.3) == 12);
  CHECK(choose_k(disk, 0.5) == 8);
  CHECK(choose_k(disk, 2 * kPi / (2 * 7.99)) == 8);
  CHECK(choose_k(disk, kPi / 4) == 6);  // exactly 4, so strictly greater and even
  CHECK_THROWS_AS(choose_k(disk, 0.95), Error);
  CHECK_THROWS_AS(choose_k(disk, 0.0), Error);
}

TEST_CASE("two-point property") {
  const auto circle = ConvexCurve::circle(1.0);
  for (double d : {0.1, 0.3, 0.45}) CHECK(two_point_property_check(circle, d, 200).passed());
  const auto circle_fail = two_point_property_check(circle, 0.6, 200);
  CHECK_FALSE(circle_fail.passed());
  CHECK(circle_fail.max_roots == 0);

  const auto ell = ConvexCurve::ellipse(1.0, 0.6);
  for (double d : {0.05, 0.15, 0.25}) {
    const auto rep = two_point_property_check(ell, d, 500);
    CHECK(rep.passed());
    CHECK(rep.min_roots == 2);
  }
  CHECK_FALSE(two_point_property_check(ell, 0.33, 500).passed());
}

TEST_CASE("boundary gap") {
  const PlanarDomain disk(ConvexCurve::circle(1.0));
  const double delta = optimal_delta(disk, 8).delta;
  const auto t0 = std::chrono::steady_clock::now();
  const BoundaryGapReport rep = boundary_gap_check(disk, 8, delta, delta / 10, 10000);
  MESSAGE("gap check " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s");
  MESSAGE("sup on boundary " << rep.sup_boundary << " gap " << rep.gap << " rejected " << rep.rejected);
  CHECK(rep.samples == 10000);
  CHECK(rep.gap > 0.0);

  const BoundaryGapReport none = boundary_gap_check(disk, 8, delta, 0.0, 100);
  CHECK(none.gap == delta);

  try {
    boundary_gap_check(disk, 8, delta, 2.5 * delta, 10000);
    FAIL("expected a violation for large eta");
  } catch (const BoundaryGapViolation& v) {
    MESSAGE("large eta: " << std::string(v.what()));
    CHECK(v.report().gap <= 0.0);
  }
}
