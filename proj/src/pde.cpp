#include "spike_crown/pde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <boost/math/tools/roots.hpp>

namespace spike_crown {

namespace {

enum Dir { kWest = 0, kEast = 1, kSouth = 2, kNorth = 3 };

using SparseMatrix = Eigen::SparseMatrix<double>;
using SparseSolver = Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>>;

// COLAMD on the sparse block, with the dense trailing border columns of a
// bordered matrix kept last so that their fill stays confined to the border.
struct BorderLastOrdering {
  using PermutationType = Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int>;
  template <class MatrixType>
  void operator()(const MatrixType& mat, PermutationType& perm) {
    const Eigen::Index n = mat.cols();
    Eigen::Index core = n;
    while (core > 0 && mat.col(core - 1).nonZeros() > 64) --core;
    SparseMatrix block = mat.topLeftCorner(core, core);
    block.makeCompressed();
    PermutationType inner;
    Eigen::COLAMDOrdering<int>()(block, inner);
    perm.resize(n);
    for (Eigen::Index i = 0; i < core; ++i) perm.indices()[i] = inner.indices()[i];
    for (Eigen::Index i = core; i < n; ++i) perm.indices()[i] = static_cast<int>(i);
  }
};
using BorderedSolver = Eigen::SparseLU<SparseMatrix, BorderLastOrdering>;

// Crossings of the boundary with the line {coord[axis] = c}, as the two
// values of the other coordinate, ordered.
std::optional<std::array<double, 2>> line_crossings(const ConvexCurve& curve, int axis, double c) {
  if (curve.kind() == CurveKind::circle) {
    const auto prm = curve.parameters();
    const double r = prm[0];
    const double center_along = axis == 0 ? prm[1] : prm[2];
    const double center_other = axis == 0 ? prm[2] : prm[1];
    const double d = c - center_along;
    if (!(std::abs(d) < r)) return std::nullopt;
    const double s = std::sqrt((r - d) * (r + d));
    return std::array<double, 2>{center_other - s, center_other + s};
  }
  const auto along = axis == 0 ? curve.table_x() : curve.table_y();
  const std::size_t m = along.size();
  std::vector<double> roots;
  auto f = [&](double t) {
    const Vec2 p = curve.point(t);
    return (axis == 0 ? p.x : p.y) - c;
  };
  for (std::size_t j = 0; j < m; ++j) {
    const double a = along[j] - c, b = along[(j + 1) % m] - c;
    if (a == 0.0) {
      roots.push_back(static_cast<double>(j) / m);
      continue;
    }
    if ((a < 0.0) == (b < 0.0) || b == 0.0) continue;
    boost::uintmax_t iterations = 100;
    const auto [lo, hi] = boost::math::tools::toms748_solve(
        f, static_cast<double>(j) / m, static_cast<double>(j + 1) / m, a, b,
        [](double x, double y) { return std::abs(y - x) <= 1e-16; }, iterations);
    roots.push_back(0.5 * (lo + hi));
  }
  if (roots.size() != 2) return std::nullopt;
  std::array<double, 2> out;
  for (int k = 0; k < 2; ++k) {
    const Vec2 p = curve.point(roots[k]);
    out[k] = axis == 0 ? p.y : p.x;
  }
  if (out[0] > out[1]) std::swap(out[0], out[1]);
  return out;
}

struct Coefficients {
  std::array<double, 4> arm;  // W, E, S, N
  double center_x = 0.0, center_y = 0.0;
};

// Shortley-Weller weights of the Laplacian; arms in length units.
Coefficients sw_coefficients(const NodeStencil& st, double h) {
  const double a = st.arm[kWest] * h, b = st.arm[kEast] * h;
  const double c = st.arm[kSouth] * h, d = st.arm[kNorth] * h;
  Coefficients k;
  k.arm[kWest] = 2.0 / (a * (a + b));
  k.arm[kEast] = 2.0 / (b * (a + b));
  k.arm[kSouth] = 2.0 / (c * (c + d));
  k.arm[kNorth] = 2.0 / (d * (c + d));
  k.center_x = 2.0 / (a * b);
  k.center_y = 2.0 / (c * d);
  return k;
}

// Discrete Laplacian at node n with boundary values from `boundary(dir)`,
// accumulated in Real.
template <class Real = double, class Boundary>
Real laplacian_at(const Grid2D& g, std::size_t n, const std::vector<double>& v, Boundary&& boundary) {
  const NodeStencil& st = g.stencil(n);
  const Coefficients k = sw_coefficients(st, g.h());
  auto term = [&](int dir) {
    const double u =
        st.neighbor[dir] == NodeStencil::kBoundary ? boundary(dir) : v[static_cast<std::size_t>(st.neighbor[dir])];
    return static_cast<Real>(k.arm[dir]) * static_cast<Real>(u);
  };
  // Summed as (x part) + (y part), each symmetric in its two arms.
  const Real center = static_cast<Real>(v[n]);
  const Real x_part = (term(kWest) + term(kEast)) - static_cast<Real>(k.center_x) * center;
  const Real y_part = (term(kSouth) + term(kNorth)) - static_cast<Real>(k.center_y) * center;
  return x_part + y_part;
}

SparseMatrix assemble_operator(const Grid2D& g, double eps2, const std::vector<double>* fprime) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(5 * g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    const NodeStencil& st = g.stencil(n);
    const Coefficients k = sw_coefficients(st, g.h());
    double diag = -eps2 * (k.center_x + k.center_y) - 1.0;
    if (fprime) diag += (*fprime)[n];
    trip.emplace_back(static_cast<int>(n), static_cast<int>(n), diag);
    for (int d = 0; d < 4; ++d)
      if (st.neighbor[d] != NodeStencil::kBoundary)
        trip.emplace_back(static_cast<int>(n), static_cast<int>(st.neighbor[d]), eps2 * k.arm[d]);
  }
  SparseMatrix a(static_cast<int>(g.size()), static_cast<int>(g.size()));
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  return a;
}

double sup_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::abs(x));
  return s;
}

void check_resolution(const Grid2D& g, double epsilon) {
  if (!(epsilon > 0.0)) fail(ErrorKind::precondition, "epsilon must be positive");
  if (g.h() > 0.25 * epsilon * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "grid spacing " << g.h() << " exceeds epsilon/4 = " << 0.25 * epsilon;
    fail(ErrorKind::precondition, os.str());
  }
}

}  // namespace

bool NodeStencil::boundary_adjacent() const noexcept {
  return std::any_of(neighbor.begin(), neighbor.end(), [](std::int64_t k) { return k == kBoundary; });
}

Vec2 Grid2D::position(std::size_t n) const noexcept {
  return {h_ * nodes_[n][0], h_ * nodes_[n][1]};
}

std::int64_t Grid2D::index(int i, int j) const noexcept {
  if (i < i_min_ || i > i_max_ || j < j_min_ || j > j_max_) return -1;
  return lookup_[static_cast<std::size_t>(j - j_min_) * static_cast<std::size_t>(i_max_ - i_min_ + 1) +
                 static_cast<std::size_t>(i - i_min_)];
}

std::shared_ptr<const Grid2D> Grid2D::discretize(const PlanarDomain& dom, double h) {
  if (!(h > 0.0 && h < dom.inradius() / 20.0)) fail(ErrorKind::precondition, "grid spacing must be below inradius/20");
  std::shared_ptr<Grid2D> g(new Grid2D());
  g->h_ = h;
  g->domain_ = std::make_shared<const PlanarDomain>(dom);
  const ConvexCurve& curve = dom.boundary();
  g->i_min_ = static_cast<int>(std::floor(dom.bbox_min().x / h)) - 1;
  g->i_max_ = static_cast<int>(std::ceil(dom.bbox_max().x / h)) + 1;
  g->j_min_ = static_cast<int>(std::floor(dom.bbox_min().y / h)) - 1;
  g->j_max_ = static_cast<int>(std::ceil(dom.bbox_max().y / h)) + 1;
  const int ni = g->i_max_ - g->i_min_ + 1, nj = g->j_max_ - g->j_min_ + 1;

  std::vector<std::optional<std::array<double, 2>>> rows(nj), cols(ni);
  for (int j = 0; j < nj; ++j) rows[j] = line_crossings(curve, 1, h * (j + g->j_min_));
  for (int i = 0; i < ni; ++i) cols[i] = line_crossings(curve, 0, h * (i + g->i_min_));

  std::vector<char> inside(static_cast<std::size_t>(ni) * nj, 0);
  auto cell = [&](int i, int j) -> char& { return inside[static_cast<std::size_t>(j) * ni + i]; };
  for (int j = 0; j < nj; ++j) {
    if (!rows[j]) continue;
    for (int i = 0; i < ni; ++i) {
      const double x = h * (i + g->i_min_);
      cell(i, j) = (*rows[j])[0] < x && x < (*rows[j])[1];
    }
  }
  auto in = [&](int i, int j) { return i >= 0 && j >= 0 && i < ni && j < nj && cell(i, j); };

  // Arms shorter than 1e-8 h drop the node; repeat until stable.
  for (bool changed = true; changed;) {
    changed = false;
    for (int j = 0; j < nj; ++j)
      for (int i = 0; i < ni; ++i) {
        if (!cell(i, j)) continue;
        const double x = h * (i + g->i_min_), y = h * (j + g->j_min_);
        double shortest = 1.0;
        if (!in(i - 1, j)) shortest = std::min(shortest, (x - (*rows[j])[0]) / h);
        if (!in(i + 1, j)) shortest = std::min(shortest, ((*rows[j])[1] - x) / h);
        if (!in(i, j - 1)) shortest = cols[i] ? std::min(shortest, (y - (*cols[i])[0]) / h) : 0.0;
        if (!in(i, j + 1)) shortest = cols[i] ? std::min(shortest, ((*cols[i])[1] - y) / h) : 0.0;
        if (shortest < 1e-8) {
          cell(i, j) = 0;
          ++g->degenerate_;
          changed = true;
        }
      }
  }

  g->lookup_.assign(inside.size(), -1);
  for (int j = 0; j < nj; ++j)
    for (int i = 0; i < ni; ++i)
      if (cell(i, j)) {
        g->lookup_[static_cast<std::size_t>(j) * ni + i] = static_cast<std::int64_t>(g->nodes_.size());
        g->nodes_.push_back({i + g->i_min_, j + g->j_min_});
      }
  g->stencils_.resize(g->nodes_.size());
  for (std::size_t n = 0; n < g->nodes_.size(); ++n) {
    const int i = g->nodes_[n][0] - g->i_min_, j = g->nodes_[n][1] - g->j_min_;
    const double x = h * g->nodes_[n][0], y = h * g->nodes_[n][1];
    NodeStencil& st = g->stencils_[n];
    const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
    for (int d = 0; d < 4; ++d) {
      if (in(i + di[d], j + dj[d])) {
        st.neighbor[d] = g->lookup_[static_cast<std::size_t>(j + dj[d]) * ni + (i + di[d])];
        st.arm[d] = 1.0;
        continue;
      }
      st.neighbor[d] = NodeStencil::kBoundary;
      double cut = 0.0;
      switch (d) {
        case kWest: cut = (*rows[j])[0]; st.cut_point[d] = {cut, y}; st.arm[d] = (x - cut) / h; break;
        case kEast: cut = (*rows[j])[1]; st.cut_point[d] = {cut, y}; st.arm[d] = (cut - x) / h; break;
        case kSouth: cut = (*cols[i])[0]; st.cut_point[d] = {x, cut}; st.arm[d] = (y - cut) / h; break;
        case kNorth: cut = (*cols[i])[1]; st.cut_point[d] = {x, cut}; st.arm[d] = (cut - y) / h; break;
      }
      st.arm[d] = std::min(1.0, st.arm[d]);
    }
    if (st.boundary_adjacent()) ++g->boundary_adjacent_;
  }
  return g;
}

double DiscreteField::sample(Vec2 x) const {
  const double h = grid->h();
  const double fi = x.x / h, fj = x.y / h;
  const int i0 = static_cast<int>(std::floor(fi)), j0 = static_cast<int>(std::floor(fj));
  const double s = fi - i0, t = fj - j0;
  auto val = [&](int i, int j) {
    const auto k = grid->index(i, j);
    return k < 0 ? 0.0 : values[static_cast<std::size_t>(k)];
  };
  return (1 - s) * (1 - t) * val(i0, j0) + s * (1 - t) * val(i0 + 1, j0) + (1 - s) * t * val(i0, j0 + 1) +
         s * t * val(i0 + 1, j0 + 1);
}

ProjectionSolution solve_projection(std::shared_ptr<const Grid2D> grid, const RadialProfile& profile,
                                    double epsilon, Vec2 center) {
  const Grid2D& g = *grid;
  check_resolution(g, epsilon);
  if (!(-signed_distance(g.domain(), center) >= 2.0 * g.h()))
    fail(ErrorKind::precondition, "projection center must lie at least 2h inside the domain");
  const double eps2 = epsilon * epsilon;
  const SparseMatrix a = assemble_operator(g, eps2, nullptr);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size()));
  for (std::size_t n = 0; n < g.size(); ++n) {
    const NodeStencil& st = g.stencil(n);
    if (!st.boundary_adjacent()) continue;
    const Coefficients k = sw_coefficients(st, g.h());
    double acc = 0.0;
    for (int d = 0; d < 4; ++d)
      if (st.neighbor[d] == NodeStencil::kBoundary)
        acc += k.arm[d] * profile.eval_w(distance(st.cut_point[d], center) / epsilon);
    rhs[static_cast<Eigen::Index>(n)] = -eps2 * acc;
  }
  SparseSolver solver;
  solver.compute(a);
  if (solver.info() != Eigen::Success) fail(ErrorKind::linear_solve, "sparse factorization of the projection operator failed");
  const Eigen::VectorXd u = solver.solve(rhs);
  if (solver.info() != Eigen::Success) fail(ErrorKind::linear_solve, "projection solve failed");

  ProjectionSolution out;
  out.center = center;
  out.correction = {grid, std::vector<double>(u.data(), u.data() + u.size()), epsilon};
  out.projection = {grid, std::vector<double>(g.size()), epsilon};
  for (std::size_t n = 0; n < g.size(); ++n)
    out.projection.values[n] = profile.eval_w(distance(g.position(n), center) / epsilon) - u[static_cast<Eigen::Index>(n)];

  const double h = g.h();
  const int i0 = static_cast<int>(std::floor(center.x / h)), j0 = static_cast<int>(std::floor(center.y / h));
  const double s = center.x / h - i0, t = center.y / h - j0;
  double log_u = 0.0;
  const int di[4] = {0, 1, 0, 1}, dj[4] = {0, 0, 1, 1};
  const double wgt[4] = {(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t};
  for (int c = 0; c < 4; ++c) {
    const auto k = g.index(i0 + di[c], j0 + dj[c]);
    if (k < 0) fail(ErrorKind::precondition, "projection center cell leaves the grid");
    const double value = u[static_cast<Eigen::Index>(k)];
    if (!(value > 0.0)) {
      std::ostringstream os;
      os << "boundary correction " << value << " is not positive near the spike center (grid too coarse)";
      fail(ErrorKind::projection_accuracy, os.str());
    }
    if (wgt[c] != 0.0) log_u += wgt[c] * std::log(value);
  }
  out.psi = -epsilon * log_u;
  return out;
}

DiscreteField assemble_ansatz(std::shared_ptr<const Grid2D> grid, const RadialProfile& profile, double epsilon,
                              const SpikeConfiguration& config) {
  check_resolution(*grid, epsilon);
  DiscreteField f{grid, std::vector<double>(grid->size(), 0.0), epsilon};
  for (std::size_t n = 0; n < grid->size(); ++n) {
    const Vec2 x = grid->position(n);
    double v = 0.0;
    for (std::size_t i = 0; i < config.k(); ++i)
      v += SpikeConfiguration::sign(i) * profile.eval_w(distance(x, config.points[i]) / epsilon);
    f.values[n] = v;
  }
  return f;
}

std::vector<double> residual(const Nonlinearity& nl, const DiscreteField& field) {
  const Grid2D& g = *field.grid;
  std::vector<double> r(g.size());
  auto zero = [](int) { return 0.0; };
  // Extended precision keeps the rounding floor well below the exponentially
  // small interaction terms.
  const long double eps2l = static_cast<long double>(field.epsilon) * field.epsilon;
  const long double power = static_cast<long double>(nl.p()) - 1.0L;
  for (std::size_t n = 0; n < g.size(); ++n) {
    const long double v = field.values[n];
    const long double fv = std::copysign(std::pow(std::abs(v), power), v);
    r[n] = static_cast<double>(eps2l * laplacian_at<long double>(g, n, field.values, zero) - v + fv);
  }
  return r;
}

ResidualNorms residual_norm(const Nonlinearity& nl, const DiscreteField& field) {
  const auto r = residual(nl, field);
  ResidualNorms out;
  long double sq = 0.0L;
  for (double x : r) {
    out.sup = std::max(out.sup, std::abs(x));
    sq += static_cast<long double>(x) * x;
  }
  const double h = field.grid->h();
  out.l2 = std::sqrt(static_cast<double>(sq)) * h;
  return out;
}

NewtonResult newton_solve(const Nonlinearity& nl, const DiscreteField& init, const NewtonOptions& options) {
  const Grid2D& g = *init.grid;
  check_resolution(g, init.epsilon);
  const double eps2 = init.epsilon * init.epsilon;
  NewtonResult out;
  out.field = init;
  std::vector<double> r = residual(nl, out.field);
  double rnorm = sup_norm(r);
  out.residual_history.push_back(rnorm);
  if (!std::isfinite(rnorm)) fail(ErrorKind::newton_divergence, "initial residual is not finite");

  SparseSolver solver;
  bool analyzed = false;
  std::vector<double> fprime(g.size());
  while (rnorm >= options.tolerance) {
    if (out.iterations >= options.max_iterations) {
      std::ostringstream os;
      os << "Newton stopped after " << out.iterations << " iterations at residual " << rnorm;
      fail(ErrorKind::newton_stall, os.str());
    }
    for (std::size_t n = 0; n < g.size(); ++n) {
      const double v = out.field.values[n];
      fprime[n] = std::abs(v) < 1e-14 ? 0.0 : nl.eval_fprime(v);
    }
    const SparseMatrix jac = assemble_operator(g, eps2, &fprime);
    if (!analyzed) {
      solver.analyzePattern(jac);
      analyzed = true;
    }
    solver.factorize(jac);
    if (solver.info() != Eigen::Success) fail(ErrorKind::linear_solve, "Jacobian factorization failed");
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(g.size()));
    for (std::size_t n = 0; n < g.size(); ++n) rhs[static_cast<Eigen::Index>(n)] = -r[n];
    const Eigen::VectorXd step = solver.solve(rhs);
    if (solver.info() != Eigen::Success) fail(ErrorKind::linear_solve, "Newton step solve failed");

    double alpha = 1.0;
    DiscreteField trial = out.field;
    std::vector<double> r_trial;
    double trial_norm = INFINITY;
    int halvings = 0;
    for (;; ++halvings) {
      if (halvings > options.max_halvings) {
        std::ostringstream os;
        os << "backtracking exhausted at residual " << rnorm;
        fail(ErrorKind::newton_stall, os.str());
      }
      for (std::size_t n = 0; n < g.size(); ++n)
        trial.values[n] = out.field.values[n] + alpha * step[static_cast<Eigen::Index>(n)];
      r_trial = residual(nl, trial);
      trial_norm = sup_norm(r_trial);
      if (!std::isfinite(trial_norm) || trial_norm > options.divergence_factor * out.residual_history.front()) {
        if (halvings == options.max_halvings) fail(ErrorKind::newton_divergence, "Newton residual diverged");
      } else if (trial_norm < rnorm) {
        break;
      }
      alpha *= 0.5;
    }
    out.field = std::move(trial);
    r = std::move(r_trial);
    rnorm = trial_norm;
    out.residual_history.push_back(rnorm);
    out.step_lengths.push_back(alpha);
    ++out.iterations;
  }
  return out;
}

namespace {

// Translation modes of one spike and their derivatives in the centre, on the
// nodes where the profile derivative is not negligible. Modes are scaled by
// eps so that entries are O(1): z[l] = eps dV/dP_l, dz[l][m] = d z[l] / dP_m.
struct SpikeModes {
  std::vector<int> node;
  std::array<std::vector<double>, 2> z;
  std::array<std::vector<double>, 3> dz;  // xx, xy, yy
};

constexpr double kModeCutoff = 45.0;

SpikeModes spike_modes(const Grid2D& g, const Nonlinearity& nl, const RadialProfile& profile, double epsilon,
                       Vec2 center, int sign) {
  SpikeModes m;
  const double w0 = profile.w0();
  const double w2_origin = 0.5 * (w0 - nl.eval_f(w0));
  for (std::size_t n = 0; n < g.size(); ++n) {
    const Vec2 d = g.position(n) - center;
    const double r = std::hypot(d.x, d.y);
    const double rho = r / epsilon;
    if (rho > kModeCutoff) continue;
    double zx = 0.0, zy = 0.0, dxx, dxy, dyy;
    if (rho < 1e-8) {
      dxx = dyy = sign * w2_origin / epsilon;
      dxy = 0.0;
    } else {
      const double ex = d.x / r, ey = d.y / r;
      const double w = profile.eval_w(rho), w1 = profile.eval_w_prime(rho);
      const double w2 = -w1 / rho + w - nl.eval_f(w);
      zx = -sign * w1 * ex;
      zy = -sign * w1 * ey;
      const double q = w1 / rho;
      dxx = sign * (w2 * ex * ex + q * (1.0 - ex * ex)) / epsilon;
      dxy = sign * (w2 * ex * ey - q * ex * ey) / epsilon;
      dyy = sign * (w2 * ey * ey + q * (1.0 - ey * ey)) / epsilon;
    }
    m.node.push_back(static_cast<int>(n));
    m.z[0].push_back(zx);
    m.z[1].push_back(zy);
    m.dz[0].push_back(dxx);
    m.dz[1].push_back(dxy);
    m.dz[2].push_back(dyy);
  }
  return m;
}

const std::vector<double>& mode_derivative(const SpikeModes& m, int l, int k) {
  return m.dz[l + k];
}

double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

CrownSolveResult solve_crown(const Nonlinearity& nl, const RadialProfile& profile, std::shared_ptr<const Grid2D> grid,
                             double epsilon, const SpikeConfiguration& init, const CrownSolveOptions& options) {
  const Grid2D& g = *grid;
  check_resolution(g, epsilon);
  if (profile.dimension_n() != 2) fail(ErrorKind::precondition, "planar solves need a two-dimensional profile");
  if (init.k() == 0) fail(ErrorKind::precondition, "empty spike configuration");
  const std::size_t nn = g.size();
  const int k = static_cast<int>(init.k());
  const int nm = 2 * k;
  const auto N = static_cast<Eigen::Index>(nn);
  const double eps2 = epsilon * epsilon;
  const double weight = g.h() * g.h() / eps2;
  const double inner_tolerance = 0.01 * options.tolerance;

  CrownSolveResult out;
  out.centers = init;
  std::vector<SpikeModes> modes(static_cast<std::size_t>(k));
  auto rebuild_modes = [&] {
    for (int i = 0; i < k; ++i)
      modes[static_cast<std::size_t>(i)] =
          spike_modes(g, nl, profile, epsilon, out.centers.points[static_cast<std::size_t>(i)], SpikeConfiguration::sign(static_cast<std::size_t>(i)));
  };
  rebuild_modes();

  Eigen::VectorXd phi = Eigen::VectorXd::Zero(N), c = Eigen::VectorXd::Zero(nm);
  DiscreteField v;
  std::vector<double> fprime(nn);
  BorderedSolver solver;
  SparseMatrix bm;
  // One step of iterative refinement with the residual in extended precision.
  auto refined_solve = [&](const Eigen::VectorXd& rhs) {
    Eigen::VectorXd x = solver.solve(rhs);
    std::vector<long double> acc(static_cast<std::size_t>(rhs.size()));
    for (Eigen::Index i = 0; i < rhs.size(); ++i) acc[static_cast<std::size_t>(i)] = rhs[i];
    for (int col = 0; col < bm.outerSize(); ++col)
      for (SparseMatrix::InnerIterator it(bm, col); it; ++it)
        acc[static_cast<std::size_t>(it.row())] -= static_cast<long double>(it.value()) * x[col];
    Eigen::VectorXd r(rhs.size());
    for (Eigen::Index i = 0; i < rhs.size(); ++i) r[i] = static_cast<double>(acc[static_cast<std::size_t>(i)]);
    x += solver.solve(r);
    return x;
  };

  auto field_of = [&](const DiscreteField& base, const Eigen::VectorXd& correction) {
    DiscreteField f = base;
    for (std::size_t n = 0; n < nn; ++n) f.values[n] += correction[static_cast<Eigen::Index>(n)];
    return f;
  };
  DiscreteField base = assemble_ansatz(grid, profile, epsilon, out.centers);
  out.residual_history.push_back(residual_norm(nl, base).sup);
  // Residual of the bordered system at (phi, c), with v = base + phi formed
  // in extended precision.
  const long double power = static_cast<long double>(nl.p()) - 1.0L;
  auto bordered_residual = [&](const DiscreteField& field, const Eigen::VectorXd& ph, const Eigen::VectorXd& mult) {
    const std::vector<double>& vb = base.values;
    std::vector<double> r(nn);
    for (std::size_t n = 0; n < nn; ++n) {
      const NodeStencil& st = g.stencil(n);
      const Coefficients kc = sw_coefficients(st, g.h());
      auto at = [&](std::int64_t m) {
        return static_cast<long double>(vb[static_cast<std::size_t>(m)]) + ph[static_cast<Eigen::Index>(m)];
      };
      auto term = [&](int dir) {
        return st.neighbor[dir] == NodeStencil::kBoundary ? 0.0L : static_cast<long double>(kc.arm[dir]) * at(st.neighbor[dir]);
      };
      const long double x = at(static_cast<std::int64_t>(n));
      const long double lap = ((term(kWest) + term(kEast)) - static_cast<long double>(kc.center_x) * x) +
                              ((term(kSouth) + term(kNorth)) - static_cast<long double>(kc.center_y) * x);
      r[n] = static_cast<double>(static_cast<long double>(eps2) * lap - x + std::copysign(std::pow(std::abs(x), power), x));
    }
    (void)field;
    Eigen::VectorXd out_r(N + nm);
    for (std::size_t n = 0; n < nn; ++n) out_r[static_cast<Eigen::Index>(n)] = r[n];
    for (int i = 0; i < k; ++i) {
      const SpikeModes& m = modes[static_cast<std::size_t>(i)];
      for (int l = 0; l < 2; ++l) {
        double dot = 0.0;
        const double cm = mult[2 * i + l];
        for (std::size_t s = 0; s < m.node.size(); ++s) {
          out_r[m.node[s]] -= cm * m.z[l][s];
          dot += m.z[l][s] * ph[m.node[s]];
        }
        out_r[N + 2 * i + l] = weight * dot;
      }
    }
    return out_r;
  };
  auto jacobian = [&](const DiscreteField& field) {
    for (std::size_t n = 0; n < nn; ++n) {
      const double x = field.values[n];
      fprime[n] = std::abs(x) < 1e-14 ? 0.0 : nl.eval_fprime(x);
    }
    return assemble_operator(g, eps2, &fprime);
  };
  auto factorize_bordered = [&](const SparseMatrix& jac) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(jac.nonZeros()) + 4 * nn);
    for (int col = 0; col < jac.outerSize(); ++col)
      for (SparseMatrix::InnerIterator it(jac, col); it; ++it) trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (int i = 0; i < k; ++i) {
      const SpikeModes& m = modes[static_cast<std::size_t>(i)];
      for (int l = 0; l < 2; ++l) {
        const int b = static_cast<int>(N) + 2 * i + l;
        for (std::size_t s = 0; s < m.node.size(); ++s) {
          if (m.z[l][s] == 0.0) continue;
          trip.emplace_back(m.node[s], b, -m.z[l][s]);
          trip.emplace_back(b, m.node[s], weight * m.z[l][s]);
        }
      }
    }
    bm = SparseMatrix(N + nm, N + nm);
    bm.setFromTriplets(trip.begin(), trip.end());
    bm.makeCompressed();
    solver.analyzePattern(bm);
    solver.factorize(bm);
    if (solver.info() != Eigen::Success) fail(ErrorKind::linear_solve, "bordered Jacobian factorization failed");
  };


  auto inner_solve = [&] {
    v = field_of(base, phi);
    Eigen::VectorXd r = bordered_residual(v, phi, c);
    double merit = max_abs(r);
    for (int it = 0; merit >= inner_tolerance; ++it) {
      if (it >= options.max_inner) {
        std::ostringstream os;
        os << "bordered Newton stopped after " << it << " iterations at residual " << merit;
        fail(ErrorKind::newton_stall, os.str());
      }
      factorize_bordered(jacobian(v));
      const Eigen::VectorXd step = solver.solve(-r);
      if (solver.info() != Eigen::Success) fail(ErrorKind::linear_solve, "bordered Newton solve failed");
      double alpha = 1.0;
      bool accepted = false;
      for (int halving = 0; halving <= options.max_halvings; ++halving, alpha *= 0.5) {
        const Eigen::VectorXd phi_t = phi + alpha * step.head(N), c_t = c + alpha * step.tail(nm);
        DiscreteField v_t = field_of(base, phi_t);
        Eigen::VectorXd r_t = bordered_residual(v_t, phi_t, c_t);
        const double m_t = max_abs(r_t);
        if (std::isfinite(m_t) && m_t < merit) {
          phi = phi_t;
          c = c_t;
          v = std::move(v_t);
          r = std::move(r_t);
          merit = m_t;
          accepted = true;
          break;
        }
      }
      ++out.inner_iterations;
      if (!accepted) {
        // Rounding floor of the discrete operator.
        if (merit < 10.0 * inner_tolerance) break;
        std::ostringstream os;
        os << "bordered Newton backtracking exhausted at residual " << merit;
        fail(ErrorKind::newton_stall, os.str());
      }
    }
  };

  for (;;) {
    inner_solve();
    const double rnorm = residual_norm(nl, v).sup;
    out.residual_history.push_back(rnorm);
    out.multiplier_history.push_back(max_abs(c));
    // Once the centres have moved, keep going until the moves settle.
    if (rnorm < options.tolerance && out.outer_iterations == 0) break;
    if (out.outer_iterations >= options.max_outer) {
      std::ostringstream os;
      os << "centre iteration stopped after " << out.outer_iterations << " steps at residual " << rnorm;
      fail(ErrorKind::newton_stall, os.str());
    }

    // Sensitivities of (phi, c) to the centres.
    const SparseMatrix jac = jacobian(v);
    factorize_bordered(jac);
    Eigen::MatrixXd dphi(N, nm), dc(nm, nm);
    for (int i = 0; i < k; ++i) {
      const SpikeModes& m = modes[static_cast<std::size_t>(i)];
      for (int l = 0; l < 2; ++l) {
        const int q = 2 * i + l;
        Eigen::VectorXd zq = Eigen::VectorXd::Zero(N);
        for (std::size_t s = 0; s < m.node.size(); ++s) zq[m.node[s]] = m.z[l][s] / epsilon;
        Eigen::VectorXd rhs(N + nm);
        std::vector<long double> jz(nn, 0.0L);
        for (int col = 0; col < jac.outerSize(); ++col)
          if (zq[col] != 0.0)
            for (SparseMatrix::InnerIterator it(jac, col); it; ++it)
              jz[static_cast<std::size_t>(it.row())] += static_cast<long double>(it.value()) * zq[col];
        for (std::size_t n = 0; n < nn; ++n) rhs[static_cast<Eigen::Index>(n)] = -static_cast<double>(jz[n]);
        rhs.tail(nm).setZero();
        for (int lp = 0; lp < 2; ++lp) {
          const std::vector<double>& d = mode_derivative(m, lp, l);
          double dot = 0.0;
          for (std::size_t s = 0; s < m.node.size(); ++s) {
            rhs[m.node[s]] += d[s] * c[2 * i + lp];
            dot += d[s] * phi[m.node[s]];
          }
          rhs[N + 2 * i + lp] = -weight * dot;
        }
        const Eigen::VectorXd sol = refined_solve(rhs);
        dphi.col(q) = sol.head(N);
        dc.col(q) = sol.tail(nm);
      }
    }
    // Directions with singular value below 1e-2 of the largest are continuous
    // symmetries of the domain (rotation on a disk); moving along them only
    // amplifies rounding.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(dc, Eigen::ComputeFullU | Eigen::ComputeFullV);
    svd.setThreshold(1e-2);
    Eigen::VectorXd shift = -svd.solve(c);
    double largest = 0.0;
    for (int i = 0; i < k; ++i) largest = std::max(largest, std::hypot(shift[2 * i], shift[2 * i + 1]));
    if (!std::isfinite(largest)) fail(ErrorKind::newton_divergence, "centre update is not finite");
    if (rnorm < options.tolerance && largest <= options.center_tolerance * epsilon) break;
    if (largest > options.max_shift * epsilon) shift *= options.max_shift * epsilon / largest;
    if (largest < 1e-15) {
      std::ostringstream os;
      os << "centre iteration stagnated at residual " << rnorm;
      fail(ErrorKind::newton_stall, os.str());
    }
    for (int i = 0; i < k; ++i) {
      out.centers.points[static_cast<std::size_t>(i)].x += shift[2 * i];
      out.centers.points[static_cast<std::size_t>(i)].y += shift[2 * i + 1];
    }
    phi += dphi * shift;
    c += dc * shift;
    rebuild_modes();
    base = assemble_ansatz(grid, profile, epsilon, out.centers);
    ++out.outer_iterations;
  }
  out.field = std::move(v);
  return out;
}

double discrete_energy(const Nonlinearity& nl, const DiscreteField& field) {
  const Grid2D& g = *field.grid;
  long double grad = 0.0L, mass = 0.0L, potential = 0.0L;
  for (std::size_t n = 0; n < g.size(); ++n) {
    const NodeStencil& st = g.stencil(n);
    const double v = field.values[n];
    for (int d = 0; d < 4; ++d) {
      if (st.neighbor[d] == NodeStencil::kBoundary) {
        grad += static_cast<long double>(v) * v / st.arm[d];
      } else if (d == kEast || d == kNorth) {
        const double dv = v - field.values[static_cast<std::size_t>(st.neighbor[d])];
        grad += static_cast<long double>(dv) * dv;
      }
    }
    mass += static_cast<long double>(v) * v;
    potential += nl.eval_F(v);
  }
  const double h2 = g.h() * g.h();
  const long double eps2 = static_cast<long double>(field.epsilon) * field.epsilon;
  return static_cast<double>(0.5L * eps2 * grad + h2 * (0.5L * mass - potential));
}

double discrete_spike_energy(const Nonlinearity& nl, const RadialProfile& profile, double epsilon, double h) {
  const PlanarDomain disk(ConvexCurve::circle(25.0 * epsilon));
  const auto grid = Grid2D::discretize(disk, h);
  SpikeConfiguration one;
  one.points = {{0.0, 0.0}};
  const NewtonResult sol = newton_solve(nl, assemble_ansatz(grid, profile, epsilon, one));
  return discrete_energy(nl, sol.field) / (epsilon * epsilon);
}

std::vector<Peak> extract_peaks(const DiscreteField& field, double min_amplitude) {
  const Grid2D& g = *field.grid;
  std::vector<Peak> peaks;
  for (std::size_t n = 0; n < g.size(); ++n) {
    const double v = field.values[n];
    if (!(std::abs(v) > min_amplitude)) continue;
    const auto [i, j] = g.node(n);
    bool is_max = true, is_min = true, complete = true;
    double nb[3][3];
    for (int dj = -1; dj <= 1 && complete; ++dj)
      for (int di = -1; di <= 1; ++di) {
        const auto k = g.index(i + di, j + dj);
        if (k < 0) {
          complete = false;
          break;
        }
        const double u = field.values[static_cast<std::size_t>(k)];
        nb[di + 1][dj + 1] = u;
        if (di == 0 && dj == 0) continue;
        if (!(v > u)) is_max = false;
        if (!(v < u)) is_min = false;
      }
    if (!complete || !(is_max || is_min)) continue;
    const double h = g.h();
    const double dxx = nb[2][1] - 2 * v + nb[0][1], dyy = nb[1][2] - 2 * v + nb[1][0];
    const double gx = 0.5 * (nb[2][1] - nb[0][1]), gy = 0.5 * (nb[1][2] - nb[1][0]);
    const double ox = dxx != 0.0 ? std::clamp(-gx / dxx, -1.0, 1.0) : 0.0;
    const double oy = dyy != 0.0 ? std::clamp(-gy / dyy, -1.0, 1.0) : 0.0;
    Peak p;
    p.location = g.position(n) + Vec2{ox * h, oy * h};
    const double fitted = v + 0.5 * (gx * ox + gy * oy);
    p.sign = v > 0 ? 1 : -1;
    p.amplitude = std::abs(fitted);
    peaks.push_back(p);
  }
  const Vec2 c = g.domain().incenter();
  auto angle = [&](const Peak& p) {
    double a = std::atan2(p.location.y - c.y, p.location.x - c.x);
    if (a < -1e-9) a += 2.0 * std::numbers::pi;
    return a;
  };
  std::sort(peaks.begin(), peaks.end(), [&](const Peak& a, const Peak& b) { return angle(a) < angle(b); });
  return peaks;
}

double lattice_symmetry_defect(const DiscreteField& field) {
  const Grid2D& g = *field.grid;
  const int maps[7][4] = {{-1, 0, 0, 1}, {1, 0, 0, -1}, {-1, 0, 0, -1}, {0, 1, 1, 0},
                          {0, -1, -1, 0}, {0, -1, 1, 0}, {0, 1, -1, 0}};
  double worst = 0.0;
  for (const auto& m : maps) {
    double plus = 0.0, minus = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n) {
      const auto [i, j] = g.node(n);
      const auto k = g.index(m[0] * i + m[1] * j, m[2] * i + m[3] * j);
      if (k < 0) return INFINITY;
      const double a = field.values[n], b = field.values[static_cast<std::size_t>(k)];
      plus = std::max(plus, std::abs(b - a));
      minus = std::max(minus, std::abs(b + a));
    }
    worst = std::max(worst, std::min(plus, minus));
  }
  return worst;
}

}  // namespace spike_crown
