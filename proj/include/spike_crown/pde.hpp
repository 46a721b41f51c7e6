#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "spike_crown/geometry.hpp"
#include "spike_crown/ground_state.hpp"
#include "spike_crown/nonlinearity.hpp"
#include "spike_crown/packing.hpp"

namespace spike_crown {

/// Shortley-Weller stencil data of one unknown node. Directions are ordered
/// west, east, south, north.
struct NodeStencil {
  static constexpr std::int64_t kBoundary = -1;
  std::array<std::int64_t, 4> neighbor{};  ///< unknown index, or kBoundary for a cut arm
  std::array<double, 4> arm{};             ///< arm length as a fraction of h, in (0, 1]
  std::array<Vec2, 4> cut_point{};         ///< boundary crossing for cut arms
  bool boundary_adjacent() const noexcept;
};

/// Uniform grid with nodes at integer multiples of h, restricted to the
/// domain interior.
class Grid2D {
 public:
  /// Throws Error(precondition) unless 0 < h < inradius / 20.
  static std::shared_ptr<const Grid2D> discretize(const PlanarDomain& dom, double h);

  double h() const noexcept { return h_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  int i_min() const noexcept { return i_min_; }
  int i_max() const noexcept { return i_max_; }
  int j_min() const noexcept { return j_min_; }
  int j_max() const noexcept { return j_max_; }
  std::array<int, 2> node(std::size_t n) const noexcept { return nodes_[n]; }
  Vec2 position(std::size_t n) const noexcept;
  /// Unknown index of node (i, j), or -1 if exterior or off the grid.
  std::int64_t index(int i, int j) const noexcept;
  const NodeStencil& stencil(std::size_t n) const noexcept { return stencils_[n]; }
  std::size_t boundary_adjacent_count() const noexcept { return boundary_adjacent_; }
  /// Nodes within 1e-8 h of the boundary that were dropped.
  std::size_t degenerate_cuts() const noexcept { return degenerate_; }
  const PlanarDomain& domain() const noexcept { return *domain_; }

 private:
  Grid2D() = default;
  double h_ = 0.0;
  int i_min_ = 0, i_max_ = -1, j_min_ = 0, j_max_ = -1;
  std::vector<std::array<int, 2>> nodes_;
  std::vector<std::int64_t> lookup_;
  std::vector<NodeStencil> stencils_;
  std::size_t boundary_adjacent_ = 0;
  std::size_t degenerate_ = 0;
  std::shared_ptr<const PlanarDomain> domain_;
};

struct DiscreteField {
  std::shared_ptr<const Grid2D> grid;
  std::vector<double> values;
  double epsilon = 0.0;

  /// Bilinear interpolation; cut arms contribute the boundary value zero.
  double sample(Vec2 x) const;
};

/// Boundary-corrected spike: projection = w((x-P)/eps) - correction, where the
/// correction solves eps^2 Lap u - u = 0 with u = w((x-P)/eps) on the boundary.
struct ProjectionSolution {
  DiscreteField projection;
  DiscreteField correction;
  Vec2 center;
  /// -eps log correction(center), log-bilinear on the cell holding the center.
  double psi = 0.0;
};

/// Throws Error(precondition) unless h <= eps/4 and d(P) >= 2h,
/// Error(linear_solve) if the sparse factorization fails and
/// Error(projection_accuracy) if the correction is not positive at P.
ProjectionSolution solve_projection(std::shared_ptr<const Grid2D> grid, const RadialProfile& profile,
                                    double epsilon, Vec2 center);

/// Nodal values of sum_i (-1)^i w(|x - P_i| / eps).
DiscreteField assemble_ansatz(std::shared_ptr<const Grid2D> grid, const RadialProfile& profile,
                              double epsilon, const SpikeConfiguration& config);

struct NewtonOptions {
  double tolerance = 1e-10;  ///< sup-norm residual
  int max_iterations = 50;
  int max_halvings = 20;
  double divergence_factor = 1e6;
};

struct NewtonResult {
  DiscreteField field;
  std::vector<double> residual_history;  ///< sup-norm residual, including the initial one
  std::vector<double> step_lengths;
  int iterations = 0;
};

/// Damped Newton on eps^2 Lap_h v - v + f(v) = 0 with v = 0 on the boundary.
/// Throws Error(newton_stall) when backtracking is exhausted or the iteration
/// budget runs out, Error(newton_divergence) if the residual blows up.
NewtonResult newton_solve(const Nonlinearity& nl, const DiscreteField& init, const NewtonOptions& options = {});

struct CrownSolveOptions {
  double tolerance = 1e-10;  ///< sup-norm residual of the final field
  int max_outer = 30;
  int max_inner = 30;
  int max_halvings = 20;
  double max_shift = 0.5;  ///< cap on a centre update, in units of eps
  /// Once the centres have moved, iterate until the update is below this
  /// (units of eps) as well as the residual tolerance.
  double center_tolerance = 1e-6;
};

struct CrownSolveResult {
  DiscreteField field;
  SpikeConfiguration centers;            ///< final spike centres
  std::vector<double> residual_history;  ///< sup-norm residual: ansatz, then after each outer step
  std::vector<double> multiplier_history;
  int outer_iterations = 0;
  int inner_iterations = 0;
};

/// Newton for a multi-spike solution written as v = V(P) + phi, V the ansatz
/// at centres P and phi orthogonal to the translation modes dV/dP. The inner
/// loop solves the bordered system for (phi, c) with S(v) = sum c_m dV/dP_m;
/// the outer loop moves the centres with Newton on c(P) = 0, its Jacobian
/// from implicit differentiation of the inner system. Requires a planar
/// profile. Throws Error(newton_stall) if either loop exhausts its budget.
CrownSolveResult solve_crown(const Nonlinearity& nl, const RadialProfile& profile,
                             std::shared_ptr<const Grid2D> grid, double epsilon,
                             const SpikeConfiguration& init, const CrownSolveOptions& options = {});

struct ResidualNorms {
  double sup = 0.0;
  double l2 = 0.0;
};
ResidualNorms residual_norm(const Nonlinearity& nl, const DiscreteField& field);
std::vector<double> residual(const Nonlinearity& nl, const DiscreteField& field);

/// 1/2 sum (eps^2 |grad v|^2 + v^2) - sum F(v) with edge differences; a cut
/// arm of fraction theta contributes v^2 / theta.
double discrete_energy(const Nonlinearity& nl, const DiscreteField& field);

/// eps^-2 times the discrete energy of one spike at the origin of a disk of
/// radius 25 eps (boundary effects below e^-50), same grid spacing.
double discrete_spike_energy(const Nonlinearity& nl, const RadialProfile& profile, double epsilon, double h);

struct Peak {
  Vec2 location;
  int sign = 1;
  double amplitude = 0.0;
};

/// Strict 8-neighbourhood extrema with |v| > min_amplitude, refined by a
/// quadratic fit, in counter-clockwise order about the domain incenter.
std::vector<Peak> extract_peaks(const DiscreteField& field, double min_amplitude);

/// Max nodal deviation |v(g x) - s v(x)| over the grid-compatible symmetries g
/// of the square lattice about the origin (rotations by quarter turns and the
/// four reflections), with s = +1 or -1 chosen per element to minimize it.
/// Infinite if the unknown set itself is not invariant.
double lattice_symmetry_defect(const DiscreteField& field);

}  // namespace spike_crown
