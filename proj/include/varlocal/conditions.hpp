#pragma once

#include <Eigen/Sparse>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "varlocal/fields.hpp"
#include "varlocal/lagrangian.hpp"
#include "varlocal/quadtensor.hpp"

namespace varlocal {

// Weak Euler-Lagrange residual r(N_p e_i) = integral (W_F(x, grad y), e_i x
// grad N_p), split into rows supported at interior nodes and rows supported
// on free faces (the discrete natural boundary condition). Dirichlet rows
// are excluded: test functions vanish there.
struct ElResidual {
  double interior_l2 = 0.0;
  double interior_linf = 0.0;
  double boundary_l2 = 0.0;
  double boundary_linf = 0.0;
  Index worst_node = -1;
  int worst_comp = -1;

  double max_linf() const { return interior_linf > boundary_linf ? interior_linf : boundary_linf; }
};

ElResidual el_residual(const Lagrangian& W, const DiscreteField& y, int qpa = 2);

// Full residual vector over nodes x components, zero at Dirichlet nodes.
// Also the Newton right-hand side for solve_extremal.
Eigen::MatrixXd el_residual_rows(const Lagrangian& W, const DiscreteField& y, int qpa = 2);

// Box grid masked down to the inscribed unit ball or half-ball. Fields live
// on the full box; only active cells are integrated; only free nodes carry
// unknowns, everything else is pinned to zero.
struct ProbeGeometry {
  Domain box;
  std::vector<char> cell_active;
  std::vector<char> node_free;
  std::string kind;  // "full", "ball", "half-ball"
  int normal_axis = -1;
  int normal_sign = 0;

  static ProbeGeometry full_domain(const Domain& dom);
  static ProbeGeometry unit_ball(int d, int res);
  // Half of the unit ball on the side (x, n) < 0 of the outward normal
  // n = sign * e_axis. Nodes on the flat diameter plane stay free.
  static ProbeGeometry half_ball(int d, int res, int axis, int sign);

  Index active_cells() const;
  double active_volume() const;
};

// Quadratic form of the second variation, assembled on the free degrees of
// freedom: stiffness (L grad phi, grad phi) and the gradient-square
// normalizer used as the pencil's right-hand side.
class SecondVariationForm {
 public:
  static SecondVariationForm assemble(const Domain& dom, int m,
                                      const std::function<QuadTensor(const Point&)>& L,
                                      int qpa = 2);
  static SecondVariationForm assemble(const ProbeGeometry& geom, int m,
                                      const std::function<QuadTensor(const Point&)>& L,
                                      int qpa = 2);

  const Eigen::SparseMatrix<double>& stiffness() const { return A_; }
  const Eigen::SparseMatrix<double>& normalizer() const { return B_; }
  int m() const { return m_; }
  const Domain& domain() const { return dom_; }
  Index n_dofs() const { return static_cast<Index>(free_nodes_.size()) * m_; }
  const std::vector<Index>& free_nodes() const { return free_nodes_; }
  // True when no dof is pinned, so per-component constants span a common
  // nullspace of both matrices and must be projected out.
  bool needs_deflation() const { return needs_deflation_; }
  double max_asymmetry() const;

  Eigen::VectorXd restrict_field(const DiscreteField& phi) const;
  DiscreteField extend(const Eigen::VectorXd& dofs) const;

  // Direct quadrature of the same integrals, bypassing the sparse matrices;
  // used to validate the assembly.
  double direct_energy(const DiscreteField& phi) const;
  double direct_normalizer(const DiscreteField& phi) const;

 private:
  static SecondVariationForm assemble_masked(const Domain& dom, int m,
                                             const std::function<QuadTensor(const Point&)>& L,
                                             int qpa, const std::vector<char>& cell_active,
                                             const std::vector<char>& node_free);

  Domain dom_ = Domain::unit_box(1, 1);
  int m_ = 1, qpa_ = 2;
  std::function<QuadTensor(const Point&)> lfield_;
  std::vector<char> cell_active_;
  std::vector<Index> free_nodes_;
  std::vector<Index> node_to_dof_;  // -1 when pinned
  bool needs_deflation_ = false;
  Eigen::SparseMatrix<double> A_, B_;
};

struct RayleighOptions {
  double tol = 1e-11;
  int max_iter = 400;
  int block = 4;
  std::uint64_t seed = 0;
};

struct RayleighResult {
  double beta = 0.0;
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
  // Heuristic enclosure from the final eigenpair residual; meaningful mainly
  // when converged is false.
  double interval_lo = 0.0;
  double interval_hi = 0.0;
};

// Smallest generalized Rayleigh quotient of (stiffness, normalizer) by
// shift-invert subspace iteration. Deterministic for a fixed seed.
RayleighResult second_variation_min_rayleigh(const SecondVariationForm& form,
                                             const RayleighOptions& opts = {});

struct ProbeBudget {
  int multistarts = 12;
  int iters = 400;
  int grid_res = 16;
};

struct QCProbeResult {
  Point x0 = Point::Zero();
  std::string geometry;
  double best_value = 0.0;
  int best_restart = -1;
  std::vector<double> restart_values;
  std::vector<int> restart_iters;
  DiscreteField best_field = DiscreteField(Domain::unit_box(1, 1), 1);
  bool violation = false;
  std::uint64_t seed = 0;
};

// Numerator, denominator and quotient of the probe objective
// integral W0(x0, grad phi) / integral |grad phi|^2 over active cells.
struct ProbeObjective {
  double numerator = 0.0;
  double denominator = 0.0;
  double value = 0.0;
};

ProbeObjective probe_objective(const ReducedLagrangian& R, const Point& x0,
                               const ProbeGeometry& geom, const DiscreteField& phi, int qpa = 2);

// Multistart descent search for quasiconvexity violations at x0. A negative
// best value is a found violation; a nonnegative one is only the best upper
// bound the budget reached.
QCProbeResult qc_interior_probe(const ReducedLagrangian& R, const Point& x0,
                                const ProbeBudget& budget, std::uint64_t seed);

// Same search on the inward half ball at a free-face point with outward
// normal sign * e_axis.
QCProbeResult qc_boundary_probe(const ReducedLagrangian& R, const Point& x0, int axis, int sign,
                                const ProbeBudget& budget, std::uint64_t seed);

// Validating wrapper: x0 must lie on a free face of dom, whose outward
// normal fixes the half-ball orientation.
QCProbeResult qc_boundary_probe(const ReducedLagrangian& R, const Domain& dom, const Point& x0,
                                const ProbeBudget& budget, std::uint64_t seed);

struct CertificateOptions {
  int qpa = 2;
  double el_tol = 1e-8;
  double violation_tol = 1e-9;
  RayleighOptions rayleigh;
  ProbeBudget budget;
  std::vector<Point> interior_points;                    // default: box center
  std::vector<std::pair<Point, std::pair<int, int>>> boundary_points;  // (x0, (axis, sign))
  std::uint64_t seed = 0;
};

struct CertificateReport {
  ElResidual el;
  bool el_pass = false;
  RayleighResult secvar;
  std::vector<QCProbeResult> interior_probes;
  std::vector<QCProbeResult> boundary_probes;
  double beta_candidate = 0.0;
  std::string verdict;  // "sufficient-candidate" | "violated" | "inconclusive"
  std::string reason;
  std::uint64_t seed = 0;
};

// Extremal gate, then second-variation coercivity, then quasiconvexity
// probes. The positive verdict is explicitly a candidate: the probes are
// search-based upper bounds, not proofs.
CertificateReport sufficiency_certificate(const Lagrangian& W, const DiscreteField& y,
                                          const CertificateOptions& opts = {});

struct NewtonOptions {
  int max_iter = 30;
  double tol = 1e-12;
  int qpa = 2;
};

// Discrete extremal: Newton iteration on the weak Euler-Lagrange residual
// with Dirichlet values pinned to g. One step is exact for quadratic W.
DiscreteField solve_extremal(const Lagrangian& W, const Domain& dom, const BoundaryData& g,
                             const NewtonOptions& opts = {});

}  // namespace varlocal
