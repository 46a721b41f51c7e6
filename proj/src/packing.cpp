#include "spike_crown/packing.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

namespace spike_crown {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool is_round(const ConvexCurve& c) { return c.kappa_max() - c.kappa_min() <= 1e-12 * c.kappa_max(); }

double unwrapped_arclength(const ConvexCurve& c, double t) {
  const double turns = std::floor(t);
  return turns * c.total_length() + c.arclength_at(t - turns);
}

// First parameter after t (within one turn) at distance `chord` from point(t).
std::optional<double> next_at_chord(const ConvexCurve& curve, double t, double chord) {
  const Vec2 p = curve.point(t);
  const auto xs = curve.table_x();
  const auto ys = curve.table_y();
  const std::size_t m = xs.size();
  const double dm = static_cast<double>(m);
  const auto first = static_cast<long long>(std::floor(t * dm)) + 1;
  for (long long idx = first; idx <= first + static_cast<long long>(m); ++idx) {
    const std::size_t j = static_cast<std::size_t>(((idx % static_cast<long long>(m)) + m) % m);
    if (std::hypot(xs[j] - p.x, ys[j] - p.y) < chord) continue;
    const double lo = std::max(t, static_cast<double>(idx - 1) / dm);
    const double hi = static_cast<double>(idx) / dm;
    auto f = [&](double s) { return distance(curve.point(s), p) - chord; };
    const double flo = f(lo), fhi = f(hi);
    if (flo >= 0.0) return lo;
    if (fhi <= 0.0) return hi;
    boost::uintmax_t iterations = 100;
    const auto [a, b] = boost::math::tools::toms748_solve(
        f, lo, hi, flo, fhi, [](double x, double y) { return std::abs(y - x) <= 1e-15; }, iterations);
    return 0.5 * (a + b);
  }
  return std::nullopt;
}

// Parameter excess t_k - t0 - 1 of the march, or nullopt if infeasible.
std::optional<double> march(const ConvexCurve& curve, std::size_t k, double chord, double t0,
                            std::vector<double>* params) {
  double t = t0;
  if (params) params->assign(1, t0);
  for (std::size_t i = 0; i < k; ++i) {
    const auto next = next_at_chord(curve, t, chord);
    if (!next) return std::nullopt;
    t = *next;
    if (params && i + 1 < k) params->push_back(t);
  }
  return t - t0 - 1.0;
}

ChordPolygon make_polygon(const ConvexCurve& curve, std::vector<double> params, double chord, double t0,
                          std::size_t k) {
  ChordPolygon poly;
  poly.chord = chord;
  poly.points.reserve(params.size());
  for (double t : params) poly.points.push_back(curve.point(t));
  // The final (closing) advance is recomputed for the arclength defect.
  double t_end = t0 + 1.0;
  if (auto last = next_at_chord(curve, params.back(), chord)) t_end = *last;
  poly.closure_defect = unwrapped_arclength(curve, t_end) - unwrapped_arclength(curve, t0) - curve.total_length();
  poly.params = std::move(params);
  (void)k;
  return poly;
}

// Closing chord from t0 by bisection; infeasible chords count as too long.
double closing_chord(const ConvexCurve& curve, std::size_t k, double t0) {
  double lo = 0.0, hi = curve.total_length() / static_cast<double>(k);
  const auto at_hi = march(curve, k, hi, t0, nullptr);
  if (at_hi && *at_hi < 0.0) fail(ErrorKind::closure, "closure defect has no sign change");
  while (hi - lo > 1e-15 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const auto e = march(curve, k, mid, t0, nullptr);
    (e && *e < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

void validate_configuration(const PlanarDomain& dom, const SpikeConfiguration& config) {
  const std::size_t k = config.k();
  if (k < 2 || k % 2 != 0) fail(ErrorKind::precondition, "spike count k must be even and at least 2");
  for (const Vec2& p : config.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) fail(ErrorKind::precondition, "non-finite spike location");
    if (!(signed_distance(dom, p) < 0.0)) fail(ErrorKind::precondition, "spike location outside the domain");
  }
  const Vec2 c = dom.incenter();
  double turn = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const Vec2 a = config.points[i] - c, b = config.points[(i + 1) % k] - c;
    const double step = std::atan2(cross(a, b), dot(a, b));
    if (!(step > 0.0)) fail(ErrorKind::precondition, "spikes are not in counter-clockwise cyclic order");
    turn += step;
  }
  if (std::abs(turn - kTwoPi) > 1e-6) fail(ErrorKind::precondition, "spikes must wind once around the domain");
}

double phi_k(std::span<const Vec2> points, std::span<const double> boundary_distances) {
  double v = INFINITY;
  for (double d : boundary_distances) v = std::min(v, d);
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) v = std::min(v, 0.5 * distance(points[i], points[j]));
  return v;
}

double phi_k(const PlanarDomain& dom, const SpikeConfiguration& config) {
  std::vector<double> d;
  d.reserve(config.k());
  for (const Vec2& p : config.points) d.push_back(std::max(0.0, -signed_distance(dom, p)));
  return phi_k(config.points, d);
}

ChordPolygon equal_chord_polygon(const ConvexCurve& curve, std::size_t k, double chord, double t0) {
  if (k < 1) fail(ErrorKind::precondition, "polygon needs at least one vertex");
  if (!(chord > 0.0)) fail(ErrorKind::precondition, "chord must be positive");
  std::vector<double> params;
  if (!march(curve, k, chord, t0, &params)) {
    std::ostringstream os;
    os << "no point at chord distance " << chord << " ahead on the curve";
    fail(ErrorKind::chord_infeasible, os.str());
  }
  return make_polygon(curve, std::move(params), chord, t0, k);
}

ClosedPolygon close_polygon(const ConvexCurve& curve, std::size_t k, double t0) {
  if (k < 3) fail(ErrorKind::precondition, "closed polygon needs k >= 3");
  const double c = closing_chord(curve, k, t0);
  ClosedPolygon out;
  // Monotonicity of the defect on the bisection bracket, sampled.
  const double hi = curve.total_length() / static_cast<double>(k);
  double prev = -INFINITY;
  for (int j = 1; j <= 32; ++j) {
    const auto e = march(curve, k, hi * j / 33.0, t0, nullptr);
    const double v = e ? *e : INFINITY;
    if (v < prev - 1e-12) out.monotone = false;
    prev = v;
  }
  std::vector<double> params;
  march(curve, k, c, t0, &params);
  out.polygon = make_polygon(curve, std::move(params), c, t0, k);
  return out;
}

MaxClosedPolygon max_closed_polygon(const ConvexCurve& curve, std::size_t k) {
  if (k < 3) fail(ErrorKind::precondition, "closed polygon needs k >= 3");
  double best_t = 0.0;
  if (!is_round(curve)) {
    const std::size_t n = 8 * k;
    double best = -INFINITY;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = closing_chord(curve, k, static_cast<double>(i) / n);
      if (c > best) best = c, arg = i;
    }
    const double dt = 1.0 / static_cast<double>(n);
    const double center = static_cast<double>(arg) * dt;
    best_t = boost::math::tools::brent_find_minima([&](double t) { return -closing_chord(curve, k, t); },
                                                   center - dt, center + dt, 40)
                 .first;
    if (closing_chord(curve, k, best_t) < best) best_t = center;
    best_t -= std::floor(best_t);
  }
  const double c = closing_chord(curve, k, best_t);
  std::vector<double> params;
  march(curve, k, c, best_t, &params);
  return {make_polygon(curve, std::move(params), c, best_t, k), best_t};
}

OptimalPacking optimal_delta(const PlanarDomain& dom, std::size_t k) {
  if (k < 4 || k % 2 != 0) fail(ErrorKind::precondition, "crown size k must be even and at least 4");
  const ConvexCurve& boundary = dom.boundary();
  const double delta_hi = 0.9 * std::min(dom.inradius(), 1.0 / boundary.kappa_max());
  auto g = [&](double delta) {
    const ConvexCurve inner = inner_parallel_curve(boundary, delta);
    return 0.5 * max_closed_polygon(inner, k).polygon.chord - delta;
  };
  const double delta_lo = 1e-6 * delta_hi;
  const double g_lo = g(delta_lo), g_hi = g(delta_hi);
  if (!(g_lo > 0.0 && g_hi < 0.0)) {
    std::ostringstream os;
    os << "no critical distance for k = " << k << " below " << delta_hi;
    fail(ErrorKind::no_critical_delta, os.str());
  }
  boost::uintmax_t iterations = 100;
  const auto [a, b] = boost::math::tools::toms748_solve(
      g, delta_lo, delta_hi, g_lo, g_hi, [](double x, double y) { return std::abs(y - x) <= 1e-14; },
      iterations);
  const double delta = 0.5 * (a + b);

  const ConvexCurve inner = inner_parallel_curve(boundary, delta);
  const MaxClosedPolygon crown = max_closed_polygon(inner, k);
  OptimalPacking out;
  out.delta = delta;
  out.chord = crown.polygon.chord;
  out.t0 = crown.t0;
  out.config.points = crown.polygon.points;
  for (double t : crown.polygon.params) out.boundary_params.push_back(t - std::floor(t));
  const double phi = phi_k(dom, out.config);
  if (std::abs(phi - delta) > 1e-8) {
    std::ostringstream os;
    os << "phi_k of the crown is " << phi << ", expected delta* = " << delta;
    fail(ErrorKind::packing_consistency, os.str());
  }
  return out;
}

std::size_t choose_k(const PlanarDomain& dom, double delta0) {
  if (!(delta0 > 0.0 && delta0 < 0.9 * dom.inradius()))
    fail(ErrorKind::precondition, "delta0 must lie in (0, 0.9 * inradius)");
  const double x = dom.boundary().total_length() / (2.0 * delta0);
  auto k = static_cast<std::size_t>(std::floor(x)) + 1;
  if (k % 2 != 0) ++k;
  return k;
}

TwoPointReport two_point_property_check(const ConvexCurve& boundary, double delta, std::size_t samples) {
  const ConvexCurve inner = inner_parallel_curve(boundary, delta);
  const auto xs = inner.table_x();
  const auto ys = inner.table_y();
  const std::size_t m = xs.size();
  TwoPointReport rep;
  rep.min_roots = SIZE_MAX;
  for (std::size_t s = 0; s < samples; ++s) {
    const Vec2 p = inner.point((static_cast<double>(s) + 0.5) / static_cast<double>(samples));
    std::size_t roots = 0;
    double prev = std::hypot(xs[m - 1] - p.x, ys[m - 1] - p.y) - 2.0 * delta;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = std::hypot(xs[j] - p.x, ys[j] - p.y) - 2.0 * delta;
      if ((e >= 0.0) != (prev >= 0.0)) ++roots;
      prev = e;
    }
    rep.min_roots = std::min(rep.min_roots, roots);
    rep.max_roots = std::max(rep.max_roots, roots);
    if (roots != 2) ++rep.failures;
    ++rep.samples;
  }
  if (samples == 0) rep.min_roots = 0;
  return rep;
}

const char* to_string(GapStratum s) {
  switch (s) {
    case GapStratum::depth_inner: return "depth_inner";
    case GapStratum::depth_outer: return "depth_outer";
    case GapStratum::chord: return "chord";
    case GapStratum::collision: return "collision";
  }
  return "unknown";
}

BoundarySampleSet sample_gap_boundary(const PlanarDomain& dom, std::size_t k, double delta, double eta,
                                      std::size_t samples, std::uint64_t seed) {
  if (k < 4 || k % 2 != 0) fail(ErrorKind::precondition, "crown size k must be even and at least 4");
  if (!(delta > 0.0) || !(eta > 0.0)) fail(ErrorKind::precondition, "need delta > 0 and eta > 0");
  BoundarySampleSet set;

  const ConvexCurve& boundary = dom.boundary();
  const ConvexCurve inner = inner_parallel_curve(boundary, delta);
  // Base polygons on the inner curve from several start phases: k slots for
  // the depth and chord strata, k - 1 slots when two spikes share a projection.
  const std::size_t phases = is_round(inner) ? 1 : 64;
  std::vector<std::vector<double>> base_k, base_k1;
  for (std::size_t j = 0; j < phases; ++j) {
    const double t0 = static_cast<double>(j) / static_cast<double>(phases);
    base_k.push_back(close_polygon(inner, k, t0).polygon.params);
    base_k1.push_back(close_polygon(inner, k - 1, t0).polygon.params);
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double jitter_depth = std::min(eta, 0.1 * delta);
  const double jitter_t = jitter_depth / boundary.total_length();
  auto at = [&](double t, double depth) {
    const CurveSample s = boundary.sample(t);
    return s.point - depth * s.normal;
  };

  std::size_t attempts = 0;
  while (set.samples.size() < samples) {
    if (++attempts > 200 * samples + 1000) break;
    const auto stratum = static_cast<GapStratum>(attempts % 4);
    const double shift = phases == 1 ? unit(rng) : 0.0;
    const auto& base = stratum == GapStratum::collision ? base_k1[rng() % phases] : base_k[rng() % phases];
    std::vector<double> t(k), depth(k);
    for (std::size_t i = 0; i < k; ++i) {
      t[i] = base[i] + shift + uniform(-jitter_t, jitter_t);
      depth[i] = delta + uniform(-jitter_depth, jitter_depth);
    }
    const std::size_t i = rng() % (stratum == GapStratum::collision ? k - 1 : k);
    switch (stratum) {
      case GapStratum::depth_inner: depth[i] = delta + eta; break;
      case GapStratum::depth_outer: depth[i] = delta - eta; break;
      case GapStratum::chord: {
        const std::size_t j = (i + 1) % k;
        const double target = 2.0 * delta - eta;
        const Vec2 p = at(t[i], depth[i]);
        const double tj = j == 0 ? t[0] + 1.0 : t[j];
        auto f = [&](double s) { return distance(at(s, depth[j]), p) - target; };
        if (!(f(t[i]) < 0.0 && f(tj) > 0.0)) {
          ++set.rejected;
          continue;
        }
        double lo = t[i], hi = tj;
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          (f(mid) < 0.0 ? lo : hi) = mid;
        }
        t[j] = j == 0 ? hi - 1.0 : hi;
        break;
      }
      case GapStratum::collision: {
        // Slots 0..k-2 hold one spike each except slot i, which holds two.
        std::vector<double> tt, dd;
        for (std::size_t s = 0; s < k - 1; ++s) {
          tt.push_back(base[s] + shift + uniform(-jitter_t, jitter_t));
          dd.push_back(delta + uniform(-jitter_depth, jitter_depth));
          if (s == i) {
            tt.push_back(tt.back());
            // Half of the partners sit at the deep end of the depth band.
            dd.push_back(unit(rng) < 0.5 ? delta + eta : uniform(delta - eta, delta + eta));
          }
        }
        t = tt;
        depth = dd;
        break;
      }
    }
    BoundarySample sample;
    sample.stratum = stratum;
    sample.depths.resize(k);
    bool ok = true;
    for (std::size_t a = 0; a < k && ok; ++a) {
      if (a > 0 && t[a] < t[a - 1]) ok = false;
      sample.config.points.push_back(at(t[a], depth[a]));
    }
    if (ok && t[k - 1] - t[0] > 1.0) ok = false;
    const auto& pts = sample.config.points;
    for (std::size_t a = 0; a < k && ok; ++a)
      for (std::size_t b = a + 1; b < k && ok; ++b)
        if (distance(pts[a], pts[b]) < 2.0 * delta - eta - 1e-12) ok = false;
    for (std::size_t a = 0; a < k && ok; ++a) {
      sample.depths[a] = -signed_distance(boundary, pts[a]);
      if (sample.depths[a] < delta - eta - 1e-12 || sample.depths[a] > delta + eta + 1e-12) ok = false;
    }
    if (!ok) {
      ++set.rejected;
      continue;
    }
    set.samples.push_back(std::move(sample));
  }
  return set;
}

BoundaryGapReport boundary_gap_check(const PlanarDomain& dom, std::size_t k, double delta, double eta,
                                     std::size_t samples, std::uint64_t seed) {
  if (k < 4 || k % 2 != 0) fail(ErrorKind::precondition, "crown size k must be even and at least 4");
  if (!(delta > 0.0) || !(eta >= 0.0)) fail(ErrorKind::precondition, "need delta > 0 and eta >= 0");
  BoundaryGapReport rep;
  rep.gap = delta;
  if (eta == 0.0) return rep;

  const BoundarySampleSet set = sample_gap_boundary(dom, k, delta, eta, samples, seed);
  rep.rejected = set.rejected;
  rep.sup_boundary = -INFINITY;
  for (const BoundarySample& s : set.samples) {
    const double phi = phi_k(s.config.points, s.depths);
    if (phi > rep.sup_boundary) {
      rep.sup_boundary = phi;
      rep.worst_stratum = s.stratum;
      rep.worst_config = s.config;
    }
    ++rep.samples;
  }
  if (rep.samples == 0) fail(ErrorKind::property_violation, "no admissible boundary configuration was sampled");
  rep.gap = delta - rep.sup_boundary;
  if (!(rep.gap > 0.0)) {
    std::ostringstream os;
    os << "sampled boundary configuration (" << to_string(rep.worst_stratum) << ") reaches phi_k = "
       << rep.sup_boundary << " >= delta = " << delta << " (eta too large)";
    throw BoundaryGapViolation(os.str(), rep);
  }
  return rep;
}

}  // namespace spike_crown
