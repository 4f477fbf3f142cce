#include "varlocal/variations.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace varlocal {

NeedleProfile bump_profile(int d, int m, const Eigen::VectorXd& amplitude) {
  if (amplitude.size() != m) throw ValidationError("amplitude must have m components");
  if (d < 1 || d > 3) throw ValidationError("profile dimension must be 1..3");
  NeedleProfile p;
  p.d = d;
  p.m = m;
  p.sup_norm = amplitude.cwiseAbs().maxCoeff();
  // integral of 16 |z|^2 (1 - |z|^2)^2 over the unit ball, per dimension
  const double base = d == 1 ? 256.0 / 105.0 : (d == 2 ? 4.0 * M_PI / 3.0 : 512.0 * M_PI / 315.0);
  p.grad_l2sq = base * amplitude.squaredNorm();
  p.value = [d, amplitude](const Point& z) -> Eigen::VectorXd {
    double r2 = z.head(d).squaredNorm();
    if (r2 >= 1.0) return Eigen::VectorXd::Zero(amplitude.size());
    double w = (1.0 - r2) * (1.0 - r2);
    return w * amplitude;
  };
  return p;
}

BallMurat::BallMurat(int n_) : n(n_) {
  if (n < 2) throw ValidationError("sawtooth family needs n >= 2");
}

double BallMurat::slope() const { return n / std::sqrt(2.0); }

double BallMurat::spike_measure() const {
  double n3 = static_cast<double>(n) * n * n;
  return (2.0 * n + 1.0) / n3;
}

double BallMurat::grad_l2sq() const { return (2.0 * n + 1.0) / (2.0 * n); }

double BallMurat::sup_norm() const { return slope() * spike_measure(); }

std::vector<std::array<double, 2>> BallMurat::spikes() const {
  std::vector<std::array<double, 2>> out;
  double n3 = static_cast<double>(n) * n * n;
  for (int k = 0; k <= n; ++k) {
    double c = static_cast<double>(k) / (n + 1);
    double a = std::max(0.0, c - 1.0 / n3);
    double b = std::min(1.0, c + 1.0 / n3);
    if (b > a) out.push_back({a, b});
  }
  return out;
}

double BallMurat::fprime(double x) const {
  double n3 = static_cast<double>(n) * n * n;
  int k = static_cast<int>(std::lround(x * (n + 1)));
  k = std::clamp(k, 0, n);
  double c = static_cast<double>(k) / (n + 1);
  if (x >= 0.0 && x <= 1.0 && std::abs(x - c) <= 1.0 / n3) return slope();
  return 0.0;
}

double BallMurat::f(double x) const {
  double acc = 0.0;
  for (const auto& iv : spikes()) {
    if (x <= iv[0]) break;
    acc += std::min(x, iv[1]) - iv[0];
  }
  return slope() * acc;
}

double BallMurat::integrate_fprime_sq() const {
  const double s2 = slope() * slope();
  std::vector<double> terms;
  for (const auto& iv : spikes()) terms.push_back(s2 * (iv[1] - iv[0]));
  return neumaier_sum(terms);
}

std::vector<std::array<double, 2>> BallMurat::young_atoms() const {
  const double mu = spike_measure();
  return {{0.0, 1.0 - mu}, {slope(), mu}};
}

VariationSequence::VariationSequence(std::string kind, Domain dom, int m,
                                     std::vector<double> labels,
                                     std::function<SequenceTerm(std::size_t)> gen,
                                     double grad_linf_bound)
    : kind_(std::move(kind)),
      dom_(std::move(dom)),
      m_(m),
      labels_(std::move(labels)),
      gen_(std::move(gen)),
      bound_(grad_linf_bound) {
  if (labels_.empty()) throw ValidationError("variation sequence needs a nonempty schedule");
}

SequenceTerm VariationSequence::term(std::size_t idx) const {
  if (idx >= labels_.size()) throw ValidationError("sequence index out of range");
  return gen_(idx);
}

void VariationSequence::validate(int qpa) const {
  double prev_sup = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    SequenceTerm t = term(i);
    double sup, ginf;
    if (t.field) {
      FieldNorms nm = norms(*t.field, qpa);
      if (t.field->max_dirichlet_trace() > 1e-12 * (1.0 + nm.value_linf))
        throw AdmissibilityViolation("variation does not vanish on the Dirichlet boundary");
      sup = nm.value_linf;
      ginf = nm.grad_linf;
    } else if (t.bm) {
      sup = t.bm_amplitude * t.bm->sup_norm();
      ginf = t.bm_amplitude * t.bm->slope();
    } else {
      throw ValidationError("sequence term carries neither a field nor a profile");
    }
    if (sup > prev_sup * 1.05)
      throw AdmissibilityViolation("variation sup norms are not decaying along the schedule");
    prev_sup = sup;
    if (ginf > bound_ * (1.0 + 1e-9))
      throw AdmissibilityViolation("variation gradient exceeds the declared uniform bound");
  }
}

VariationSequence weak_variation(const DiscreteField& phi, const std::vector<double>& eps,
                                 int qpa) {
  for (double e : eps)
    if (!(e > 0.0)) throw ValidationError("weak variation scales must be positive");
  FieldNorms nm = norms(phi, qpa);
  if (phi.max_dirichlet_trace() > 1e-12 * (1.0 + nm.value_linf))
    throw AdmissibilityViolation("variation does not vanish on the Dirichlet boundary");
  double max_eps = *std::max_element(eps.begin(), eps.end());
  auto base = std::make_shared<DiscreteField>(phi);
  auto sched = std::make_shared<std::vector<double>>(eps);
  double base_l2 = nm.grad_l2;
  auto gen = [base, sched, base_l2](std::size_t i) {
    SequenceTerm t;
    t.label = (*sched)[i];
    t.alpha = t.label * base_l2;
    t.field = base->scaled(t.label);
    return t;
  };
  return VariationSequence("weak", phi.domain(), phi.m(), eps, gen, nm.grad_linf * max_eps);
}

VariationSequence needle_variation(const Domain& dom, const NeedleProfile& profile,
                                   const Point& x0, const std::vector<double>& eps, int qpa) {
  if (profile.d != dom.dim()) throw ValidationError("profile dimension does not match the domain");
  for (double e : eps) {
    if (!(e > 0.0)) throw ValidationError("needle scales must be positive");
    for (int a = 0; a < dom.dim(); ++a) {
      if (x0[a] - e < dom.origin(a) - 1e-15 ||
          x0[a] + e > dom.origin(a) + dom.length(a) + 1e-15)
        throw SupportEscapesDomain("needle support leaves the domain at scale " +
                                   std::to_string(e));
    }
  }
  auto prof = std::make_shared<NeedleProfile>(profile);
  auto sched = std::make_shared<std::vector<double>>(eps);
  Domain dcopy = dom;
  int m = profile.m;
  auto gen = [prof, sched, dcopy, m, qpa, x0](std::size_t i) {
    double e = (*sched)[i];
    DiscreteField phi = DiscreteField::from_function(dcopy, m, [&](const Point& x) {
      Point z = Point::Zero();
      for (int a = 0; a < dcopy.dim(); ++a) z[a] = (x[a] - x0[a]) / e;
      if (z.head(dcopy.dim()).squaredNorm() >= 1.0) return Eigen::VectorXd::Zero(m).eval();
      return (e * prof->value(z)).eval();
    });
    SequenceTerm t;
    t.label = e;
    double l2sq = gradient(phi, qpa).grad_l2sq();
    double target = std::pow(e, dcopy.dim()) * prof->grad_l2sq;
    if (target > 0.0 && std::abs(l2sq - target) > 0.02 * target)
      throw ValidationError("needle term deviates from the scaling law; grid too coarse");
    t.alpha = std::sqrt(l2sq);
    t.field = std::move(phi);
    return t;
  };
  // Gradient sup norms are scale invariant; measure once at the coarsest eps.
  double bound = 0.0;
  {
    SequenceTerm t0 = gen(0);
    bound = gradient(*t0.field, qpa).grad_linf() * 1.05;
  }
  return VariationSequence("needle", dom, m, eps, gen, bound);
}

VariationSequence ball_murat_sequence(const std::vector<int>& ns) {
  if (ns.empty()) throw ValidationError("schedule must be nonempty");
  std::array<FaceLabel, 6> faces;
  faces.fill(FaceLabel::free_face);
  faces[0] = FaceLabel::dirichlet;  // x-low, the only face the profile vanishes on
  Domain dom(3, {1.0, 1.0, 1.0}, {4, 4, 4}, faces);
  std::vector<double> labels;
  for (int n : ns) labels.push_back(static_cast<double>(n));
  auto sched = std::make_shared<std::vector<int>>(ns);
  auto gen = [sched](std::size_t i) {
    SequenceTerm t;
    BallMurat bm((*sched)[i]);
    t.label = bm.n;
    t.bm_amplitude = 1.0 / bm.n;
    t.alpha = t.bm_amplitude * std::sqrt(bm.grad_l2sq());
    t.bm = bm;
    return t;
  };
  return VariationSequence("ball_murat", dom, 3, labels, gen, 1.0 / std::sqrt(2.0));
}

VariationSequence custom_sequence(std::vector<DiscreteField> fields, int qpa) {
  if (fields.empty()) throw ValidationError("custom sequence needs at least one field");
  Domain dom = fields[0].domain();
  int m = fields[0].m();
  for (const auto& f : fields)
    if (!f.domain().same_grid(dom) || f.m() != m)
      throw ValidationError("custom sequence fields must share one grid");
  std::vector<double> labels;
  for (std::size_t i = 0; i < fields.size(); ++i) labels.push_back(static_cast<double>(i + 1));
  double bound = 0.0;
  for (const auto& f : fields) bound = std::max(bound, gradient(f, qpa).grad_linf());
  auto store = std::make_shared<std::vector<DiscreteField>>(std::move(fields));
  auto gen = [store, qpa](std::size_t i) {
    SequenceTerm t;
    t.label = static_cast<double>(i + 1);
    t.field = (*store)[i];
    t.alpha = std::sqrt(gradient((*store)[i], qpa).grad_l2sq());
    return t;
  };
  return VariationSequence("custom", dom, m, labels, gen, bound);
}

namespace {

bool field_is_affine(const DiscreteField& y, Matrix& A) {
  const Domain& dom = y.domain();
  A = y.gradient_at(dom.cell_center(0));
  double scale = 1.0 + A.norm();
  for (Index c = 0; c < dom.num_cells(); ++c) {
    Matrix G = y.gradient_at(dom.cell_center(c));
    if ((G - A).norm() > 1e-12 * scale) return false;
  }
  return true;
}

IncrementRecord analytic_increment(const Lagrangian& W, const Matrix& A, const SequenceTerm& t) {
  if (!W.x_uniform())
    throw ValidationError("analytic sequence path needs an x-independent integrand");
  const BallMurat& bm = *t.bm;
  const double a = t.bm_amplitude;
  const double mu = bm.spike_measure();
  Matrix G_spike = Matrix::Zero(W.m(), W.d());
  G_spike(0, 0) = a * bm.slope();

  Point xbar = Point::Zero();
  EvalResult at_base = W.evaluate(xbar, A, 1);
  double w_on = W.value(xbar, A + G_spike);

  IncrementRecord r;
  r.label = t.label;
  r.l2sq = a * a * bm.grad_l2sq();
  r.alpha = std::sqrt(r.l2sq);
  double cross = mu * frob_inner(at_base.gradient, G_spike);
  r.dE = mu * (w_on - at_base.value);
  r.dE_prime = mu * (w_on - at_base.value - frob_inner(at_base.gradient, G_spike));
  r.identity_gap = std::abs(r.dE - r.dE_prime - cross) / std::max(1.0, std::abs(r.dE));
  r.ratio = r.dE / r.l2sq;
  r.prime_ratio = r.dE_prime / r.l2sq;

  ReducedLagrangian R = reduce_constant(W, A);
  Matrix G_psi = G_spike / r.alpha;
  r.fcal_ratio = mu * R.F_cal(xbar, r.alpha, G_psi);
  return r;
}

}  // namespace

IncrementTrace increments(const Lagrangian& W, const DiscreteField& y,
                          const VariationSequence& seq, int qpa) {
  if (W.m() != y.m() || W.m() != seq.m() || W.d() != y.domain().dim())
    throw ValidationError("integrand, base field and sequence shapes disagree");
  if (!y.domain().same_grid(seq.domain()))
    throw ValidationError("base field and sequence live on different grids");

  IncrementTrace trace;
  const Domain& dom = y.domain();

  const bool any_analytic = seq.kind() == "ball_murat";
  const bool any_grid = !any_analytic;

  Matrix A;
  if (any_analytic && !field_is_affine(y, A))
    throw ValidationError("analytic sequence path needs an affine base field");

  GradientField gy = gradient(y, qpa);
  const CellQuadrature& cq = gy.quadrature();
  // Base-point values and stresses, reused across every term.
  std::vector<double> w0(dom.num_cells() * cq.nq);
  std::vector<Matrix> p0(dom.num_cells() * cq.nq);
  if (any_grid) {
    for (Index c = 0; c < dom.num_cells(); ++c)
      for (int q = 0; q < cq.nq; ++q) {
        EvalResult e = W.evaluate(gy.quad_point(c, q), gy.at(c, q), 1);
        w0[c * cq.nq + q] = e.value;
        p0[c * cq.nq + q] = e.gradient;
      }
  }
  ReducedLagrangian R = reduce_at_field(W, y);

  for (std::size_t i = 0; i < seq.size(); ++i) {
    SequenceTerm t = seq.term(i);
    if (!t.field) {
      trace.records.push_back(analytic_increment(W, A, t));
      continue;
    }
    GradientField gp = gradient(*t.field, qpa);
    std::vector<double> t_de, t_dep, t_cross, t_l2;
    const Index nterms = dom.num_cells() * cq.nq;
    t_de.reserve(nterms);
    t_dep.reserve(nterms);
    t_cross.reserve(nterms);
    t_l2.reserve(nterms);
    for (Index c = 0; c < dom.num_cells(); ++c)
      for (int q = 0; q < cq.nq; ++q) {
        const Matrix& G = gp.at(c, q);
        const Index k = c * cq.nq + q;
        double w = cq.weight[q];
        double wn = W.value(gy.quad_point(c, q), gy.at(c, q) + G);
        double lin = frob_inner(p0[k], G);
        t_de.push_back(w * (wn - w0[k]));
        t_dep.push_back(w * (wn - w0[k] - lin));
        t_cross.push_back(w * lin);
        t_l2.push_back(w * G.squaredNorm());
      }
    IncrementRecord r;
    r.label = t.label;
    r.dE = neumaier_sum(t_de);
    r.dE_prime = neumaier_sum(t_dep);
    r.l2sq = neumaier_sum(t_l2);
    r.alpha = std::sqrt(std::max(0.0, r.l2sq));
    double cross = neumaier_sum(t_cross);
    r.identity_gap = std::abs(r.dE - r.dE_prime - cross) / std::max(1.0, std::abs(r.dE));
    if (r.l2sq > 0.0) {
      r.ratio = r.dE / r.l2sq;
      r.prime_ratio = r.dE_prime / r.l2sq;
      std::vector<double> t_fcal;
      t_fcal.reserve(nterms);
      for (Index c = 0; c < dom.num_cells(); ++c)
        for (int q = 0; q < cq.nq; ++q) {
          Matrix G_psi = gp.at(c, q) / r.alpha;
          t_fcal.push_back(cq.weight[q] * R.F_cal(gy.quad_point(c, q), r.alpha, G_psi));
        }
      r.fcal_ratio = neumaier_sum(t_fcal);
    }
    trace.records.push_back(r);
  }
  return trace;
}

DeltaPrimeEstimate delta_prime_estimator(const IncrementTrace& trace, int tail_len) {
  if (trace.records.empty()) throw ValidationError("increment trace is empty");
  DeltaPrimeEstimate est;
  for (const IncrementRecord& r : trace.records) {
    if (std::abs(r.fcal_ratio - r.prime_ratio) > 1e-12 * std::max(1.0, std::abs(r.prime_ratio)))
      throw ValidationError("rescaled-integrand path disagrees with the direct increment ratio");
    est.ratios.push_back(r.prime_ratio);
  }
  int n = static_cast<int>(est.ratios.size());
  est.tail_len = tail_len > 0 ? std::min(tail_len, n) : std::max(1, n / 2);
  double lo = est.ratios[n - est.tail_len], hi = lo;
  for (int i = n - est.tail_len; i < n; ++i) {
    lo = std::min(lo, est.ratios[i]);
    hi = std::max(hi, est.ratios[i]);
  }
  est.tail_min = lo;
  est.converged = (hi - lo) <= 1e-6 * std::max(1.0, std::abs(lo));
  return est;
}

}  // namespace varlocal
