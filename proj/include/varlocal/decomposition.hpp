#pragma once

#include <vector>

#include "varlocal/fields.hpp"
#include "varlocal/lagrangian.hpp"
#include "varlocal/measures.hpp"
#include "varlocal/variations.hpp"

namespace varlocal {

// Cellwise Hardy-Littlewood surrogate: max over a dyadic radius ladder of the
// averages of g over balls around each cell center, the grid extended by even
// reflection across the faces. Radius 0 (the cell itself) is always included,
// so Mg >= g.
std::vector<double> maximal_function(const Domain& dom, const std::vector<double>& g);

// Clamp to [-j, j], sign preserved.
double truncate(double s, double j);

struct SplitResult {
  double j = 0.0;
  DiscreteField z = DiscreteField(Domain::unit_box(1, 1), 1);
  DiscreteField v = DiscreteField(Domain::unit_box(1, 1), 1);
  std::vector<char> R_mask;             // cells where M(|grad psi|) >= j
  Eigen::VectorXd mean_shift;           // constant moved from v into z
  double C_effective = 0.0;             // extension slope / j actually used
  double C_realized = 0.0;              // sup |grad z| / j after interpolation
  double grad_z_inf = 0.0;
  double mask_volume = 0.0;
  bool degenerate = false;              // every cell masked: z = mean, v = rest
};

// Oscillation/concentration split: z is the componentwise McShane extension
// of psi from the nodes of unmasked cells with slope C*j (raised to the
// realized Lipschitz constant of psi on those nodes when that is larger, so
// the good values are reproduced exactly), v the mean-zero remainder.
SplitResult lipschitz_split(const DiscreteField& psi, double j, double C = 1.0, int qpa = 2);

struct EquiModulus {
  std::vector<double> deltas;
  std::vector<double> values;  // worst member mass packed into measure delta
};

// Exact worst-set masses for cellwise-constant densities: cells taken in
// decreasing density order, the last one fractionally.
EquiModulus equi_modulus(const Domain& dom, const std::vector<std::vector<double>>& cell_masses,
                         const std::vector<double>& deltas);
std::vector<double> cell_gradsq_masses(const GradientField& g);

struct OrthogonalityCheck {
  double residual = 0.0;     // L1 norm of F(psi') - F(z') - F(v')
  double bound = 0.0;        // proof-style surrogate, then residual <= bound
  double fcal_psi_l1 = 0.0;  // L1 norm of F(x, alpha, grad psi)
  double c1 = 0.0;           // realized difference-quotient constant of U(.)|.|^2
  double c2 = 0.0;           // realized sup of |U| along grad z
};

// Pointwise L1 defect of splitting the rescaled integrand across z + v,
// together with the upper bound the splitting argument actually provides:
// c1 * int_R (|psi'|+|v'|)|z'| + c2 * int_R |z'|^2 + int |L||z'||v'|,
// the constants sampled at the quadrature points themselves.
OrthogonalityCheck orthogonality_residual(const DiscreteField& psi, const DiscreteField& z,
                                          const DiscreteField& v, double alpha,
                                          const ReducedLagrangian& R, int qpa = 2);

struct ZeroPartCheck {
  std::vector<double> u_trace;     // per step: L1 norm of U(x, a grad z)|grad z|^2
  std::vector<double> fcal_total;  // per step: integral of F(x, a, grad z)
  std::vector<double> quad_total;  // per step: integral of (1/2)(L grad z, grad z)
  std::vector<double> cell_gap;    // per step: max cellwise average deviation
};

// Along a vanishing amplitude schedule the rescaled integrand of an
// equiintegrable family collapses onto its quadratic part; the U-term trace
// is the quantity that must decay.
ZeroPartCheck zeropart_check(const std::vector<DiscreteField>& z_family,
                             const std::vector<double>& alpha_schedule,
                             const ReducedLagrangian& R, int qpa = 2);

struct PiRow {
  double label = 0.0;
  double j = 0.0;
  double pi = 0.0;        // total mass of |grad psi|^2
  double m_part = 0.0;    // oscillation part, |grad z|^2
  double pi_tilde = 0.0;  // concentration part, |grad v|^2
  double cross = 0.0;     // 2 <grad z, grad v>
  double gap = 0.0;       // |pi - m - pi_tilde - cross|
};

struct PiDecomposition {
  std::vector<PiRow> rows;
  int pool_tail = 0;
  double pooled_pi = 0.0;
  double pooled_m = 0.0;
  double pooled_pi_tilde = 0.0;
  double pooled_cross = 0.0;
  double pooled_gap = 0.0;
};

// Splits the gradient mass of each sequence term at level j and books
// pi = m-part + pi-tilde + cross, pooled over the tail. Additivity is exact;
// the interesting output is where the mass sits. Grid terms go through
// lipschitz_split; the analytic sawtooth family truncates its gradient in
// closed form. j_schedule has one entry per term or a single broadcast value.
PiDecomposition pi_decomposition_check(const VariationSequence& seq,
                                       const std::vector<double>& j_schedule, int pool_tail,
                                       int qpa = 2);

}  // namespace varlocal
