#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spike_crown/error.hpp"
#include "spike_crown/vec2.hpp"

namespace spike_crown {

enum class CurveKind { circle, ellipse, superellipse, spline, parallel };

std::string to_string(CurveKind kind);

/// Local differential data of a parametrized curve at parameter t in [0, 1).
struct CurveSample {
  Vec2 point;
  Vec2 tangent;  ///< unit, counter-clockwise direction
  Vec2 normal;   ///< unit outward normal
  double curvature = 0.0;
  double speed = 0.0;  ///< |dP/dt|
};

struct CurveTableEntry {
  double t = 0.0;
  CurveSample sample;
  double arclength = 0.0;  ///< cumulative arclength from t = 0
};

/// Strictly convex, counter-clockwise, closed planar curve with a dense
/// parameter table (4096 samples) carrying points, frames, curvature and
/// cumulative arclength.
class ConvexCurve {
 public:
  static constexpr std::size_t kTableSize = 4096;

  static ConvexCurve circle(double radius, Vec2 center = {});
  static ConvexCurve ellipse(double a, double b);
  /// |x/a|^m + |y/b|^m = 1 with m >= 2, parametrized by polar angle.
  static ConvexCurve superellipse(double a, double b, double m);
  /// Periodic cubic spline through the control points (uniform parameter).
  /// Throws Error(domain) unless the result is strictly convex.
  static ConvexCurve spline(std::vector<Vec2> control_points);

  CurveKind kind() const noexcept { return kind_; }
  /// Shape parameters: circle {R, cx, cy}, ellipse {a, b}, superellipse {a, b, m},
  /// parallel {offset}; empty for splines.
  std::span<const double> parameters() const noexcept { return params_; }

  CurveSample sample(double t) const;
  Vec2 point(double t) const { return sample(t).point; }

  std::span<const CurveTableEntry> table() const noexcept { return table_; }
  double total_length() const noexcept { return length_; }
  /// Arclength from t = 0 to t (t wrapped into [0, 1)).
  double arclength_at(double t) const;
  double kappa_min() const noexcept { return kappa_min_; }
  double kappa_max() const noexcept { return kappa_max_; }
  Vec2 centroid() const noexcept { return centroid_; }
  std::span<const double> table_x() const noexcept { return xs_; }
  std::span<const double> table_y() const noexcept { return ys_; }
  /// Radius within which projections onto the curve stay clear of the medial axis.
  double reach() const noexcept { return 0.9 / kappa_max_; }

 private:
  struct Derivatives {
    Vec2 point;
    Vec2 d1;
    double curvature;
  };
  using Evaluator = std::function<Derivatives(double)>;

  ConvexCurve(CurveKind kind, std::vector<double> params, Evaluator eval);
  void build_table();

  friend ConvexCurve inner_parallel_curve(const ConvexCurve& curve, double offset);

  CurveKind kind_;
  std::vector<double> params_;
  std::shared_ptr<const Evaluator> eval_;
  std::vector<CurveTableEntry> table_;
  std::vector<double> xs_, ys_;  // table points, contiguous for nearest-point scans
  double length_ = 0.0;
  double kappa_min_ = 0.0;
  double kappa_max_ = 0.0;
  Vec2 centroid_;
};

/// Region bounded by a strictly convex curve (planar, so d_Gamma = d_boundary).
class PlanarDomain {
 public:
  explicit PlanarDomain(ConvexCurve boundary);

  const ConvexCurve& boundary() const noexcept { return boundary_; }
  double inradius() const noexcept { return inradius_; }
  Vec2 incenter() const noexcept { return incenter_; }
  /// Axis-aligned bounding box of the boundary curve.
  Vec2 bbox_min() const noexcept { return bbox_min_; }
  Vec2 bbox_max() const noexcept { return bbox_max_; }

 private:
  ConvexCurve boundary_;
  double inradius_ = 0.0;
  Vec2 incenter_;
  Vec2 bbox_min_;
  Vec2 bbox_max_;
};

struct Projection {
  double t = 0.0;
  Vec2 point;
  double distance = 0.0;
};

/// Nearest point on the curve. Throws Error(non_unique_projection) when two
/// distinct boundary points are equidistant within tolerance.
Projection project_to_curve(const ConvexCurve& curve, Vec2 x);

/// Negative inside, positive outside, zero on the boundary.
double signed_distance(const PlanarDomain& domain, Vec2 x);
double signed_distance(const ConvexCurve& curve, Vec2 x);

/// The curve t -> point(t) - offset * normal(t). Throws
/// Error(parallel_curve_degeneracy) unless offset < 1 / kappa_max.
ConvexCurve inner_parallel_curve(const ConvexCurve& curve, double offset);

double curve_length(const ConvexCurve& curve);

/// min over pairs P, Q on the curve with |P - Q| >= separation of nu_P . (P - Q).
/// Returns +infinity when no pair is that far apart.
double check_strict_convexity(const ConvexCurve& curve, double separation);

struct ContractionReport {
  std::size_t samples = 0;
  std::size_t violations = 0;
  /// max over samples of |P - eta1 nu_P - Q + eta2 nu_Q| - |P - Q|; negative when all pass.
  double worst_slack = -INFINITY;
};

class ContractionViolation : public Error {
 public:
  ContractionViolation(const std::string& message, ContractionReport report)
      : Error(ErrorKind::property_violation, message), report_(report) {}
  const ContractionReport& report() const noexcept { return report_; }

 private:
  ContractionReport report_;
};

/// Random test of |P - eta1 nu_P - Q + eta2 nu_Q| < |P - Q| for |P - Q| >= separation
/// and eta1, eta2 in [0, eta_max], not both zero. Throws ContractionViolation
/// (carrying the report) if any sample violates the strict inequality.
ContractionReport lemma_contraction_check(const ConvexCurve& curve, double separation,
                                          double eta_max, std::size_t samples,
                                          std::uint64_t seed = 1);

}  // namespace spike_crown
