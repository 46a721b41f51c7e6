#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "spike_crown/geometry.hpp"
#include "spike_crown/ground_state.hpp"
#include "spike_crown/packing.hpp"
#include "spike_crown/pde.hpp"

namespace spike_crown {

enum class EnergyForm { leading, psi_numeric };

const char* to_string(EnergyForm form);

/// Reduced energy of a k-spike configuration,
///   S = 1/2 sum_i exp(-psi(P_i)/eps) - sum_{i<j} (-1)^(i+j) w(|P_i - P_j|/eps),
/// where psi = 2 d(P) (leading) or the boundary-projection exponent of a
/// grid solve (psi_numeric).
class ReducedEnergyModel {
 public:
  /// Throws Error(precondition) unless eps <= delta/5, 0 < eta < delta/2, a
  /// grid with h <= eps/4 is supplied for psi_numeric, and the inner parallel
  /// curve at delta exists. `diagnostic` lifts the eps/delta bound and the
  /// membership precondition of evaluate_M (small examples, single spikes).
  ReducedEnergyModel(PlanarDomain dom, RadialProfile profile, double epsilon, EnergyForm form, double eta,
                     double delta, std::shared_ptr<const Grid2D> grid = nullptr, bool diagnostic = false);

  const PlanarDomain& domain() const noexcept { return dom_; }
  const RadialProfile& profile() const noexcept { return profile_; }
  double epsilon() const noexcept { return epsilon_; }
  EnergyForm form() const noexcept { return form_; }
  double eta() const noexcept { return eta_; }
  double delta() const noexcept { return delta_; }
  const std::shared_ptr<const Grid2D>& grid() const noexcept { return grid_; }
  bool diagnostic() const noexcept { return diagnostic_; }
  /// The curve at distance delta inside the boundary.
  const ConvexCurve& crown_curve() const noexcept { return inner_; }

 private:
  PlanarDomain dom_;
  RadialProfile profile_;
  double epsilon_;
  EnergyForm form_;
  double eta_;
  double delta_;
  std::shared_ptr<const Grid2D> grid_;
  bool diagnostic_;
  ConvexCurve inner_;
};

/// Throws Error(precondition) if d(P) < eta, Error(projection_accuracy) from
/// the grid solve.
double psi_eps(const ReducedEnergyModel& model, Vec2 p);

struct EnergyTerm {
  int i = 0;
  int j = -1;  ///< -1 for a boundary term
  int sign = 1;
  double log_magnitude = 0.0;
};

struct EnergyBreakdown {
  double log_boundary = -INFINITY;   ///< log of the boundary sum
  double log_repulsive = -INFINITY;  ///< opposite-sign pairs, entering with +
  double log_attractive = -INFINITY; ///< same-sign pairs, entering with -
  std::vector<EnergyTerm> terms;
};

struct EnergyValue {
  double log_abs = -INFINITY;  ///< log |S|
  int sign = 0;
  /// Positive and negative parts agree within 1e-12 relative.
  bool cancellation = false;
  EnergyBreakdown breakdown;
  double log_scale = 0.0;  ///< 2 delta / eps
  /// exp(2 delta / eps) S, the quantity minimized.
  double scaled() const;
};

/// Throws Error(precondition) with the membership diagnostic unless the
/// configuration lies in the crown neighbourhood (skipped in diagnostic mode).
EnergyValue evaluate_M(const ReducedEnergyModel& model, const SpikeConfiguration& config);

/// Central differences of the scaled energy, step max(1e-7, 1e-5 eps), as
/// (x_0, y_0, x_1, y_1, ...).
std::vector<double> gradient_M(const ReducedEnergyModel& model, const SpikeConfiguration& config);

enum class MembershipFailure { none, depth, order, chord };
const char* to_string(MembershipFailure f);

struct Membership {
  bool member = false;
  MembershipFailure failure = MembershipFailure::none;
  int index = -1;     ///< offending point (first of the pair for chords)
  int partner = -1;
  double value = 0.0; ///< offending depth, projection gap or chord
  std::string detail;
  explicit operator bool() const noexcept { return member; }
};

/// Depths in the open band (delta - eta, delta + eta), projections onto the
/// delta curve in strictly increasing cyclic order, all distances above
/// 2 delta - eta. Projection failures propagate.
Membership configuration_set_membership(const ReducedEnergyModel& model, const SpikeConfiguration& config);

struct MinimizeOptions {
  double gradient_tolerance = 1e-9;
  int max_iterations = 500;
  int max_halvings = 40;
};

struct MinimizeTraceRow {
  int iteration = 0;
  double log_M = 0.0;
  double grad_norm = 0.0;
  double min_chord = 0.0;
  double min_depth = 0.0;
};

struct MinimizeResult {
  SpikeConfiguration config;
  double log_M = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;  ///< gradient tolerance reached
  /// Stopped because three successive steps changed the scaled energy by less
  /// than 1e-14 relative, or no step decreased it: the resolution limit of the
  /// difference gradient.
  bool stalled = false;
  std::vector<MinimizeTraceRow> trace;
  /// Largest |d(P_i) - delta| and |chord - 2 delta| over adjacent pairs.
  double depth_deviation = 0.0;
  double chord_deviation = 0.0;
  bool location_check = false;  ///< both deviations within 5 eps
};

/// BFGS on the scaled energy; trial points outside the neighbourhood are
/// rejected by halving. Stops at the gradient tolerance, the iteration budget
/// or stagnation. Throws Error(precondition) unless init is a member,
/// Error(boundary_trapped) if every halving of a descent step leaves the set.
MinimizeResult minimize_in_U(const ReducedEnergyModel& model, const SpikeConfiguration& init,
                             const MinimizeOptions& options = {});

}  // namespace spike_crown
