#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "varlocal/fields.hpp"
#include "varlocal/lagrangian.hpp"

namespace varlocal {

// Analytic profile on the unit ball, vanishing on its boundary, with its
// exact gradient-square integral so grid values can be checked against a
// closed form.
struct NeedleProfile {
  int d = 0, m = 0;
  std::function<Eigen::VectorXd(const Point&)> value;
  double grad_l2sq = 0.0;
  double sup_norm = 0.0;
};

// amplitude[i] * (1 - |z|^2)^2 per component.
NeedleProfile bump_profile(int d, int m, const Eigen::VectorXd& amplitude);

// The sawtooth family f_n with slope n/sqrt(2) on n+1 evenly spaced spikes of
// half-width 1/n^3 (the first one clipped by the domain edge at 0). All
// quantities are exact closed forms over [0,1]; the spikes are far below any
// sensible grid, so this family is never sampled.
struct BallMurat {
  int n = 2;

  explicit BallMurat(int n_);

  double slope() const;
  double spike_measure() const;            // |{f' != 0}| = (2n+1)/n^3
  double grad_l2sq() const;                // (2n+1)/(2n)
  double sup_norm() const;                 // f(1) = slope * spike_measure
  std::vector<std::array<double, 2>> spikes() const;  // clipped to [0,1]
  double fprime(double x) const;
  double f(double x) const;
  // Piecewise integration of (f')^2 from the interval list; cross-checks the
  // closed form.
  double integrate_fprime_sq() const;
  // Distribution of f' as (value, weight) pairs: the resting atom at zero and
  // the spike plateau. The zero atom carries 1 - spike_measure().
  std::vector<std::array<double, 2>> young_atoms() const;
};

// One element phi_n of a variation sequence. Grid kinds carry the field;
// the analytic kind carries the profile and its amplitude, and the field
// stays empty.
struct SequenceTerm {
  double label = 0.0;  // eps for weak/needle, n for the analytic family
  double alpha = 0.0;  // ||grad phi_n||_2
  std::optional<DiscreteField> field;
  std::optional<BallMurat> bm;
  double bm_amplitude = 0.0;
};

class VariationSequence {
 public:
  VariationSequence(std::string kind, Domain dom, int m, std::vector<double> labels,
                    std::function<SequenceTerm(std::size_t)> gen, double grad_linf_bound);

  const std::string& kind() const { return kind_; }
  const Domain& domain() const { return dom_; }
  int m() const { return m_; }
  std::size_t size() const { return labels_.size(); }
  const std::vector<double>& labels() const { return labels_; }
  double grad_linf_bound() const { return bound_; }

  SequenceTerm term(std::size_t idx) const;

  // Walks the whole schedule and enforces the admissibility contract:
  // zero Dirichlet trace, sup norms decaying (within 5% slack), gradient sup
  // norms within the declared bound.
  void validate(int qpa = 2) const;

 private:
  std::string kind_;
  Domain dom_;
  int m_;
  std::vector<double> labels_;
  std::function<SequenceTerm(std::size_t)> gen_;
  double bound_;
};

// n -> eps_n * phi for a fixed admissible phi.
VariationSequence weak_variation(const DiscreteField& phi, const std::vector<double>& eps,
                                 int qpa = 2);

// Shrinking reproduction eps * profile((x - x0)/eps) sampled on dom's grid.
VariationSequence needle_variation(const Domain& dom, const NeedleProfile& profile,
                                   const Point& x0, const std::vector<double>& eps, int qpa = 2);

// The analytic sawtooth family as a variation: phi_n = (1/n) psi_n, which
// keeps gradients bounded by 1/sqrt(2) while sup norms vanish. Lives on the
// unit cube with the x-low face Dirichlet (the profile vanishes only there).
VariationSequence ball_murat_sequence(const std::vector<int>& ns);

VariationSequence custom_sequence(std::vector<DiscreteField> fields, int qpa = 2);

struct IncrementRecord {
  double label = 0.0;
  double alpha = 0.0;
  double dE = 0.0;
  double dE_prime = 0.0;
  double l2sq = 0.0;
  double ratio = 0.0;         // dE / l2sq
  double prime_ratio = 0.0;   // dE_prime / l2sq
  double fcal_ratio = 0.0;    // same quantity through the (U, L) expansion
  double identity_gap = 0.0;  // |dE - dE_prime - linear term|, relative
};

struct IncrementTrace {
  std::vector<IncrementRecord> records;
};

// Per-term energy increments of E(y + phi_n) - E(y), both raw and with the
// extremal's linear part removed. The analytic family is integrated in
// closed form (two-point evaluation of the integrand), grid kinds by
// quadrature.
IncrementTrace increments(const Lagrangian& W, const DiscreteField& y,
                          const VariationSequence& seq, int qpa = 2);

struct DeltaPrimeEstimate {
  double tail_min = 0.0;
  std::vector<double> ratios;  // dE_prime / l2sq per term
  bool converged = false;
  int tail_len = 0;
};

// liminf surrogate: minimum of the last tail_len prime ratios (default: half
// the schedule). Rejects traces where the two ratio paths disagree beyond
// 1e-12, since they are algebraically identical.
DeltaPrimeEstimate delta_prime_estimator(const IncrementTrace& trace, int tail_len = -1);

}  // namespace varlocal
