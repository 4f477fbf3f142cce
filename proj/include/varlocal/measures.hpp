#pragma once

#include <functional>
#include <string>
#include <vector>

#include "varlocal/conditions.hpp"
#include "varlocal/fields.hpp"
#include "varlocal/lagrangian.hpp"
#include "varlocal/variations.hpp"

namespace varlocal {

struct MatrixAtom {
  Matrix F;
  double weight = 0.0;
};

// Per-cell statistics of one rescaled variation: mass = integral of
// |grad psi|^2 over the cell, ball atoms at alpha * grad psi, sphere atoms at
// grad psi / |grad psi|, all weighted by the same quadrature masses.
struct CellMeasure {
  double mass = 0.0;
  std::vector<MatrixAtom> ball;
  std::vector<MatrixAtom> sphere;
};

struct EmpiricalMeasureBundle {
  Domain dom = Domain::unit_box(1, 1);
  int m = 0;
  double alpha = 0.0;
  double R = 0.0;  // realized sup of |alpha * grad psi| over the atoms
  std::vector<CellMeasure> cells;

  double total_mass() const;
  // Probability views. Massless cells fall back to the delta at 0 for the
  // ball measure and to an empty list for the sphere measure.
  std::vector<MatrixAtom> normalized_ball(Index c) const;
  std::vector<MatrixAtom> normalized_sphere(Index c) const;
};

EmpiricalMeasureBundle pushforward_bundle(double alpha, const DiscreteField& psi, int qpa = 2);

// Exact bundle of the analytic sawtooth family on a given box grid: slab
// intersections with the spike set are integrated in closed form. amplitude
// multiplies the profile; the stored psi is the unit-normalized one.
EmpiricalMeasureBundle bm_pushforward_bundle(const BallMurat& bm, double amplitude,
                                             const Domain& dom);

double I_functional(const Point& x0, const std::vector<MatrixAtom>& mu,
                    const std::vector<MatrixAtom>& lambda, const ULPair& ul);

struct RepresentationCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double gap = 0.0;
};

// Two evaluations of the same quadrature sum: the rescaled integrand cell by
// cell (x frozen at cell centers) against mass-weighted I over the bundle.
RepresentationCheck representation_check(double alpha, const DiscreteField& psi, const ULPair& ul,
                                         int qpa = 2);
RepresentationCheck representation_check(double alpha, const DiscreteField& psi,
                                         const ReducedLagrangian& R, int qpa = 2);

struct LimitBundle {
  EmpiricalMeasureBundle pooled;
  std::vector<double> pooled_labels;
  // Max over cells of the mass change between consecutive pooled bundles; a
  // stand-in convergence diagnostic for the weak-* limit.
  std::vector<double> mass_drift;
};

// Pools the last pool_tail terms of the sequence: cell masses averaged, atom
// lists concatenated at weight 1/pool_tail.
LimitBundle limit_bundle(const VariationSequence& seq, int pool_tail, int qpa = 2);

struct BlowUp {
  DiscreteField field = DiscreteField(Domain::unit_box(1, 1), 1);
  ProbeGeometry geom;
  Point x0 = Point::Zero();
  double r = 0.0;
};

// (v(x0 + r z) - C_r) / r resampled onto a centered box carrying the ball
// (interior x0) or half-ball (free-face x0) mask; C_r makes the result
// quadrature-mean-zero over the mask.
BlowUp blow_up(const DiscreteField& v, const Point& x0, double r);

struct LocalizationRecord {
  double r = 0.0;
  int k = 0;
  double label = 0.0;
  double value = 0.0;
};

struct LocalizationResult {
  std::vector<LocalizationRecord> records;
  double extrapolated = 0.0;
  double I_at_x0 = 0.0;
  bool pi_mass_zero = false;
  std::string note;
};

// Normalized cutoff energies (1/pi(B)) * integral of F(x0, alpha_n,
// grad(theta_k (psi_n - c))) over B(x0, r) meet the bundle functional
// I(x0) as n, then k, then 1/r grow. The extrapolated value is the tail mean
// at the steepest cutoff and smallest radius.
LocalizationResult localization_check(const VariationSequence& seq, const Point& x0,
                                      const std::vector<double>& r_schedule,
                                      const std::vector<int>& k_schedule,
                                      const ReducedLagrangian& R, int qpa = 2);

// Cells whose centers lie in B(x0, r).
std::vector<char> ball_cells(const Domain& dom, const Point& x0, double r);

// Nodal multiplication by the radial ramp min(1, k (r - |x - x0|) / r)+.
DiscreteField apply_radial_cutoff(const DiscreteField& f, const Point& x0, double r, int k);

}  // namespace varlocal
