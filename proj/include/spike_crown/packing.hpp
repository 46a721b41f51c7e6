#pragma once

#include <cstdint>
#include <vector>

#include "spike_crown/geometry.hpp"

namespace spike_crown {

/// k spikes P_1..P_k in counter-clockwise order about the domain incenter;
/// spike i (0-based) carries sign (-1)^i.
struct SpikeConfiguration {
  std::vector<Vec2> points;

  std::size_t k() const noexcept { return points.size(); }
  static int sign(std::size_t i) noexcept { return i % 2 == 0 ? 1 : -1; }
};

/// Throws Error(precondition) unless k is even and >= 2, all points lie
/// strictly inside the domain, and the angles about the incenter strictly
/// increase cyclically (one full turn).
void validate_configuration(const PlanarDomain& dom, const SpikeConfiguration& config);

/// min over i of d(P_i) and over i < j of |P_i - P_j| / 2.
double phi_k(const PlanarDomain& dom, const SpikeConfiguration& config);
/// Same value from precomputed boundary distances.
double phi_k(std::span<const Vec2> points, std::span<const double> boundary_distances);

/// A polygon inscribed in a curve, vertices given by their curve parameters
/// (unwrapped, increasing from t0).
struct ChordPolygon {
  std::vector<double> params;
  std::vector<Vec2> points;
  double chord = 0.0;
  /// Arclength of the k advances minus the curve length.
  double closure_defect = 0.0;
};

/// Marches k times from t0 to the first parameter ahead at distance `chord`.
/// Throws Error(chord_infeasible) if some step finds no such point.
ChordPolygon equal_chord_polygon(const ConvexCurve& curve, std::size_t k, double chord, double t0);

struct ClosedPolygon {
  ChordPolygon polygon;
  /// False if the sampled closure defect was not monotone in the chord.
  bool monotone = true;
};

/// Equal-chord k-gon through point(t0) that closes after one turn; bisection
/// on the chord. Throws Error(precondition) for k < 3 and Error(closure) if
/// the defect has no sign change.
ClosedPolygon close_polygon(const ConvexCurve& curve, std::size_t k, double t0);

/// Largest closing chord over all start parameters (constant on circles).
struct MaxClosedPolygon {
  ChordPolygon polygon;
  double t0 = 0.0;
};
MaxClosedPolygon max_closed_polygon(const ConvexCurve& curve, std::size_t k);

struct OptimalPacking {
  double delta = 0.0;
  SpikeConfiguration config;
  std::vector<double> boundary_params;  ///< parameters of the crown vertices on the inner parallel curve
  double chord = 0.0;
  double t0 = 0.0;
};

/// Critical distance delta* where the widest closed equal-chord k-gon on the
/// inner parallel curve at offset delta has edge 2 delta, and that polygon.
/// Throws Error(precondition) for odd k, Error(no_critical_delta) without a
/// sign change and Error(packing_consistency) if phi_k differs from delta*.
OptimalPacking optimal_delta(const PlanarDomain& dom, std::size_t k);

/// Smallest even k with k > length / (2 delta0).
std::size_t choose_k(const PlanarDomain& dom, double delta0);

struct TwoPointReport {
  std::size_t samples = 0;
  std::size_t failures = 0;
  std::size_t min_roots = 0;
  std::size_t max_roots = 0;
  bool passed() const noexcept { return failures == 0; }
};

/// For sampled P on the inner parallel curve at `delta`, counts the parameters
/// t with |point(t) - P| = 2 delta; passes iff every count is 2.
TwoPointReport two_point_property_check(const ConvexCurve& boundary, double delta, std::size_t samples);

enum class GapStratum { depth_inner, depth_outer, chord, collision };

struct BoundaryGapReport {
  double sup_boundary = 0.0;
  double gap = 0.0;
  std::size_t samples = 0;
  std::size_t rejected = 0;
  GapStratum worst_stratum = GapStratum::depth_inner;
  SpikeConfiguration worst_config;
};

class BoundaryGapViolation : public Error {
 public:
  BoundaryGapViolation(const std::string& message, BoundaryGapReport report)
      : Error(ErrorKind::property_violation, message), report_(std::move(report)) {}
  const BoundaryGapReport& report() const noexcept { return report_; }

 private:
  BoundaryGapReport report_;
};

struct BoundarySample {
  SpikeConfiguration config;
  std::vector<double> depths;  ///< distance of each point to the boundary
  GapStratum stratum = GapStratum::depth_inner;
};

struct BoundarySampleSet {
  std::vector<BoundarySample> samples;
  std::size_t rejected = 0;
};

/// Random configurations on the boundary of the crown neighbourhood below:
/// a jittered equal-chord polygon on the inner parallel curve with one
/// defining constraint made active (depth delta +- eta, adjacent chord
/// 2 delta - eta, or two spikes sharing a projection). Requires eta > 0.
BoundarySampleSet sample_gap_boundary(const PlanarDomain& dom, std::size_t k, double delta, double eta,
                                      std::size_t samples, std::uint64_t seed = 1);

/// Samples configurations on the boundary of the crown neighbourhood
/// { delta-eta < d(P_i) < delta+eta, ordered projections, |P_i - P_j| > 2 delta - eta }
/// and returns the largest phi_k found. eta = 0 returns gap = delta. Throws
/// BoundaryGapViolation if the gap is not positive.
BoundaryGapReport boundary_gap_check(const PlanarDomain& dom, std::size_t k, double delta, double eta,
                                     std::size_t samples, std::uint64_t seed = 1);

const char* to_string(GapStratum s);

}  // namespace spike_crown
