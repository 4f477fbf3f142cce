#include "varlocal/measures.hpp"

#include <algorithm>
#include <cmath>

namespace varlocal {

namespace {

constexpr double kCoalesceTol = 1e-9;

// Merges atoms whose matrices agree to kCoalesceTol (weighted mean), so
// repeated gradients from symmetric quadrature collapse to one atom without
// binning bias.
std::vector<MatrixAtom> coalesce(const std::vector<MatrixAtom>& atoms) {
  std::vector<MatrixAtom> out;
  for (const auto& a : atoms) {
    bool merged = false;
    for (auto& g : out) {
      if ((g.F - a.F).norm() <= kCoalesceTol) {
        const double w = g.weight + a.weight;
        if (w > 0.0) g.F = (g.weight * g.F + a.weight * a.F) / w;
        g.weight = w;
        merged = true;
        break;
      }
    }
    if (!merged) out.push_back(a);
  }
  return out;
}

double masked_quadrature(const Domain& dom, int qpa, const std::vector<char>& mask,
                         const std::function<double(Index cell, int q, const Point& x)>& f) {
  const CellQuadrature quad = CellQuadrature::make(dom, qpa);
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(dom.num_cells()) * quad.nq);
  for (Index c = 0; c < dom.num_cells(); ++c) {
    if (!mask.empty() && !mask[c]) continue;
    const Point lo = dom.node_coord(dom.cell_node(c, 0));
    for (int q = 0; q < quad.nq; ++q) {
      Point x = lo;
      for (int a = 0; a < dom.dim(); ++a) x[a] += quad.local[q * dom.dim() + a] * dom.spacing(a);
      terms.push_back(quad.weight[q] * f(c, q, x));
    }
  }
  return neumaier_sum(terms);
}

Eigen::VectorXd masked_mean(const DiscreteField& f, const std::vector<char>& mask, int qpa) {
  const Domain& dom = f.domain();
  double vol = 0.0;
  for (Index c = 0; c < dom.num_cells(); ++c)
    if (mask.empty() || mask[c]) vol += dom.cell_volume();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(f.m());
  if (vol <= 0.0) return mean;
  for (int comp = 0; comp < f.m(); ++comp) {
    mean[comp] = masked_quadrature(dom, qpa, mask,
                                   [&](Index, int, const Point& x) {
                                     return f.interpolate(x)[comp];
                                   }) /
                 vol;
  }
  return mean;
}

// Distances from x0 to the domain walls; identifies whether x0 sits on a
// unique free face (half-ball case) or strictly inside.
struct BasePlacement {
  bool interior = true;
  int axis = -1;
  int sign = 0;
};

BasePlacement classify_base_point(const Domain& dom, const Point& x0, double r) {
  BasePlacement bp;
  int hits = 0;
  for (int a = 0; a < dom.dim(); ++a) {
    const double lo = x0[a] - dom.origin(a);
    const double hi = dom.origin(a) + dom.length(a) - x0[a];
    const double tol = 1e-12 * (1.0 + dom.length(a));
    if (lo < -tol || hi < -tol) throw InvalidBasePoint("base point lies outside the domain");
    for (int side = 0; side < 2; ++side) {
      const double d = side == 0 ? lo : hi;
      if (d <= tol) {
        if (dom.face(a, side) == FaceLabel::dirichlet)
          throw InvalidBasePoint("base point sits on a Dirichlet face");
        ++hits;
        bp.interior = false;
        bp.axis = a;
        bp.sign = side == 0 ? -1 : 1;
      } else if (d < r) {
        throw InvalidBasePoint("ball of this radius exits the domain");
      }
    }
  }
  if (hits > 1) throw InvalidBasePoint("base point sits on an edge or corner");
  return bp;
}

const DiscreteField& require_field(const SequenceTerm& t) {
  if (!t.field) throw ValidationError("operation needs grid-based sequence terms");
  return *t.field;
}

EmpiricalMeasureBundle term_bundle(const VariationSequence& seq, const SequenceTerm& t, int qpa) {
  if (t.bm) return bm_pushforward_bundle(*t.bm, t.bm_amplitude, seq.domain());
  const DiscreteField& phi = require_field(t);
  if (t.alpha <= 0.0) throw ZeroVariation("sequence term has zero gradient norm");
  return pushforward_bundle(t.alpha, phi.scaled(1.0 / t.alpha), qpa);
}

}  // namespace

double EmpiricalMeasureBundle::total_mass() const {
  std::vector<double> terms;
  terms.reserve(cells.size());
  for (const auto& c : cells) terms.push_back(c.mass);
  return neumaier_sum(terms);
}

std::vector<MatrixAtom> EmpiricalMeasureBundle::normalized_ball(Index c) const {
  const CellMeasure& cm = cells[c];
  if (cm.mass <= 0.0) return {MatrixAtom{Matrix::Zero(m, dom.dim()), 1.0}};
  std::vector<MatrixAtom> out = cm.ball;
  for (auto& a : out) a.weight /= cm.mass;
  return out;
}

std::vector<MatrixAtom> EmpiricalMeasureBundle::normalized_sphere(Index c) const {
  const CellMeasure& cm = cells[c];
  if (cm.mass <= 0.0) return {};
  std::vector<MatrixAtom> out = cm.sphere;
  for (auto& a : out) a.weight /= cm.mass;
  return out;
}

EmpiricalMeasureBundle pushforward_bundle(double alpha, const DiscreteField& psi, int qpa) {
  EmpiricalMeasureBundle b;
  b.dom = psi.domain();
  b.m = psi.m();
  b.alpha = alpha;
  const GradientField g = gradient(psi, qpa);
  b.cells.resize(b.dom.num_cells());
  for (Index c = 0; c < b.dom.num_cells(); ++c) {
    CellMeasure& cm = b.cells[c];
    double mass = 0.0;
    for (int q = 0; q < g.nq(); ++q) {
      const Matrix& G = g.at(c, q);
      const double gsq = G.squaredNorm();
      const double w = g.weight(q) * gsq;
      mass += w;
      if (w <= 0.0) continue;
      cm.ball.push_back({alpha * G, w});
      cm.sphere.push_back({G / std::sqrt(gsq), w});
      b.R = std::max(b.R, alpha * std::sqrt(gsq));
    }
    cm.mass = mass;
    cm.ball = coalesce(cm.ball);
    cm.sphere = coalesce(cm.sphere);
  }
  if (b.total_mass() <= 0.0) throw ZeroVariation("variation carries no gradient mass");
  return b;
}

EmpiricalMeasureBundle bm_pushforward_bundle(const BallMurat& bm, double amplitude,
                                             const Domain& dom) {
  EmpiricalMeasureBundle b;
  b.dom = dom;
  b.m = 3;
  const double l2 = bm.grad_l2sq();
  b.alpha = amplitude * std::sqrt(l2);
  const double psi_slope = bm.slope() / std::sqrt(l2);
  const double peak = amplitude * bm.slope();
  const auto spikes = bm.spikes();

  Matrix ballF = Matrix::Zero(b.m, dom.dim());
  ballF(0, 0) = peak;
  Matrix theta = Matrix::Zero(b.m, dom.dim());
  theta(0, 0) = 1.0;

  double cross = 1.0;
  for (int a = 1; a < dom.dim(); ++a) cross *= dom.spacing(a);

  b.cells.resize(dom.num_cells());
  for (Index c = 0; c < dom.num_cells(); ++c) {
    const auto mc = dom.cell_multi(c);
    const double lo = dom.origin(0) + mc[0] * dom.spacing(0);
    const double hi = lo + dom.spacing(0);
    double overlap = 0.0;
    for (const auto& s : spikes) overlap += std::max(0.0, std::min(hi, s[1]) - std::max(lo, s[0]));
    CellMeasure& cm = b.cells[c];
    cm.mass = psi_slope * psi_slope * overlap * cross;
    if (cm.mass > 0.0) {
      cm.ball.push_back({ballF, cm.mass});
      cm.sphere.push_back({theta, cm.mass});
      b.R = std::max(b.R, peak);
    }
  }
  return b;
}

double I_functional(const Point& x0, const std::vector<MatrixAtom>& mu,
                    const std::vector<MatrixAtom>& lambda, const ULPair& ul) {
  const QuadTensor L = ul.L(x0);
  std::vector<double> terms;
  terms.reserve(mu.size() + lambda.size());
  for (const auto& a : mu) terms.push_back(a.weight * ul.U(x0, a.F));
  for (const auto& a : lambda) terms.push_back(0.5 * a.weight * L.quadratic_form(a.F));
  return neumaier_sum(terms);
}

RepresentationCheck representation_check(double alpha, const DiscreteField& psi, const ULPair& ul,
                                         int qpa) {
  const Domain& dom = psi.domain();
  const GradientField g = gradient(psi, qpa);

  std::vector<double> lhs_terms;
  lhs_terms.reserve(static_cast<std::size_t>(dom.num_cells()) * g.nq());
  for (Index c = 0; c < dom.num_cells(); ++c) {
    const Point xc = dom.cell_center(c);
    const QuadTensor L = ul.L(xc);
    for (int q = 0; q < g.nq(); ++q) {
      const Matrix& G = g.at(c, q);
      lhs_terms.push_back(
          g.weight(q) * (ul.U(xc, alpha * G) * G.squaredNorm() + 0.5 * L.quadratic_form(G)));
    }
  }

  const EmpiricalMeasureBundle b = pushforward_bundle(alpha, psi, qpa);
  std::vector<double> rhs_terms;
  rhs_terms.reserve(b.cells.size());
  for (Index c = 0; c < dom.num_cells(); ++c) {
    const Point xc = dom.cell_center(c);
    rhs_terms.push_back(b.cells[c].mass *
                        I_functional(xc, b.normalized_ball(c), b.normalized_sphere(c), ul));
  }

  RepresentationCheck rc;
  rc.lhs = neumaier_sum(lhs_terms);
  rc.rhs = neumaier_sum(rhs_terms);
  rc.gap = std::abs(rc.lhs - rc.rhs);
  return rc;
}

RepresentationCheck representation_check(double alpha, const DiscreteField& psi,
                                         const ReducedLagrangian& R, int qpa) {
  return representation_check(alpha, psi, R.as_ul_pair(), qpa);
}

LimitBundle limit_bundle(const VariationSequence& seq, int pool_tail, int qpa) {
  if (seq.size() == 0) throw ValidationError("cannot pool an empty sequence");
  const int K = std::clamp<int>(pool_tail, 1, static_cast<int>(seq.size()));
  const std::size_t first = seq.size() - static_cast<std::size_t>(K);

  LimitBundle lb;
  std::vector<EmpiricalMeasureBundle> tail;
  for (std::size_t i = first; i < seq.size(); ++i) {
    tail.push_back(term_bundle(seq, seq.term(i), qpa));
    lb.pooled_labels.push_back(seq.labels()[i]);
  }

  EmpiricalMeasureBundle& pooled = lb.pooled;
  pooled.dom = tail.front().dom;
  pooled.m = tail.front().m;
  pooled.alpha = tail.back().alpha;
  pooled.cells.resize(pooled.dom.num_cells());
  for (const auto& b : tail) {
    pooled.R = std::max(pooled.R, b.R);
    for (Index c = 0; c < pooled.dom.num_cells(); ++c) {
      pooled.cells[c].mass += b.cells[c].mass / K;
      for (const auto& a : b.cells[c].ball)
        pooled.cells[c].ball.push_back({a.F, a.weight / K});
      for (const auto& a : b.cells[c].sphere)
        pooled.cells[c].sphere.push_back({a.F, a.weight / K});
    }
  }
  for (auto& cm : pooled.cells) {
    cm.ball = coalesce(cm.ball);
    cm.sphere = coalesce(cm.sphere);
  }

  for (std::size_t i = 1; i < tail.size(); ++i) {
    double drift = 0.0;
    for (Index c = 0; c < pooled.dom.num_cells(); ++c)
      drift = std::max(drift, std::abs(tail[i].cells[c].mass - tail[i - 1].cells[c].mass));
    lb.mass_drift.push_back(drift);
  }
  return lb;
}

std::vector<char> ball_cells(const Domain& dom, const Point& x0, double r) {
  std::vector<char> mask(dom.num_cells(), 0);
  for (Index c = 0; c < dom.num_cells(); ++c) {
    Point d = dom.cell_center(c) - x0;
    for (int a = dom.dim(); a < 3; ++a) d[a] = 0.0;
    mask[c] = d.norm() < r ? 1 : 0;
  }
  return mask;
}

DiscreteField apply_radial_cutoff(const DiscreteField& f, const Point& x0, double r, int k) {
  if (!(r > 0.0) || k < 1) throw ValidationError("radial cutoff needs r > 0 and k >= 1");
  DiscreteField out = f;
  const Domain& dom = f.domain();
  for (Index p = 0; p < dom.num_nodes(); ++p) {
    Point d = dom.node_coord(p) - x0;
    for (int a = dom.dim(); a < 3; ++a) d[a] = 0.0;
    const double ramp = std::clamp(k * (r - d.norm()) / r, 0.0, 1.0);
    for (int comp = 0; comp < f.m(); ++comp) out.value(p, comp) *= ramp;
  }
  return out;
}

BlowUp blow_up(const DiscreteField& v, const Point& x0, double r) {
  const Domain& dom = v.domain();
  if (!(r > 0.0)) throw ValidationError("blow-up radius must be positive");
  for (int a = 0; a < dom.dim(); ++a)
    if (2.0 * r < 4.0 * dom.spacing(a))
      throw ResolutionTooCoarse("blow-up ball spans fewer than 4 cells per axis");
  const BasePlacement bp = classify_base_point(dom, x0, r);

  int res = static_cast<int>(std::floor(2.0 * r / dom.min_spacing()));
  res = std::clamp(res, 4, 64);
  ProbeGeometry geom = bp.interior ? ProbeGeometry::unit_ball(dom.dim(), res)
                                   : ProbeGeometry::half_ball(dom.dim(), res, bp.axis, bp.sign);

  DiscreteField w(geom.box, v.m());
  for (Index p = 0; p < geom.box.num_nodes(); ++p) {
    Point x = x0;
    const Point z = geom.box.node_coord(p);
    for (int a = 0; a < dom.dim(); ++a) x[a] += r * z[a];
    // Corners of the box outside B(x0, r) may fall outside the source domain;
    // interpolation clamps there and the mask keeps them out of every integral.
    w.set_node_value(p, v.interpolate(x));
  }

  const Eigen::VectorXd mean = masked_mean(w, geom.cell_active, 2);
  for (Index p = 0; p < geom.box.num_nodes(); ++p)
    w.set_node_value(p, (w.node_value(p) - mean) / r);

  BlowUp out;
  out.field = std::move(w);
  out.geom = std::move(geom);
  out.x0 = x0;
  out.r = r;
  return out;
}

LocalizationResult localization_check(const VariationSequence& seq, const Point& x0,
                                      const std::vector<double>& r_schedule,
                                      const std::vector<int>& k_schedule,
                                      const ReducedLagrangian& R, int qpa) {
  const Domain& dom = seq.domain();
  if (seq.size() == 0 || r_schedule.empty() || k_schedule.empty())
    throw ValidationError("localization needs a sequence and nonempty schedules");
  const double r_min = *std::min_element(r_schedule.begin(), r_schedule.end());
  const int k_max = *std::max_element(k_schedule.begin(), k_schedule.end());
  classify_base_point(dom, x0, r_min);

  // Rescaled terms and their gradient fields, shared across the (r, k) grid.
  std::vector<DiscreteField> psis;
  std::vector<double> alphas;
  std::vector<GradientField> grads;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const SequenceTerm t = seq.term(i);
    const DiscreteField& phi = require_field(t);
    if (t.alpha <= 0.0) throw ZeroVariation("sequence term has zero gradient norm");
    psis.push_back(phi.scaled(1.0 / t.alpha));
    alphas.push_back(t.alpha);
    grads.push_back(gradient(psis.back(), qpa));
  }

  LocalizationResult res;
  std::vector<double> tail_values;
  for (double r : r_schedule) {
    const std::vector<char> mask = ball_cells(dom, x0, r);
    if (std::count(mask.begin(), mask.end(), char(1)) == 0)
      throw ResolutionTooCoarse("localization ball contains no cell centers");
    for (int k : k_schedule) {
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const GradientField& g = grads[i];
        double den = 0.0;
        {
          std::vector<double> terms;
          for (Index c = 0; c < dom.num_cells(); ++c) {
            if (!mask[c]) continue;
            for (int q = 0; q < g.nq(); ++q)
              terms.push_back(g.weight(q) * g.at(c, q).squaredNorm());
          }
          den = neumaier_sum(terms);
        }

        LocalizationRecord rec;
        rec.r = r;
        rec.k = k;
        rec.label = seq.labels()[i];
        if (den <= 0.0) {
          res.pi_mass_zero = true;
          res.note = "no gradient mass near the base point";
          res.records.push_back(rec);
          continue;
        }

        DiscreteField shifted = psis[i];
        const Eigen::VectorXd c0 = masked_mean(shifted, mask, qpa);
        for (Index p = 0; p < dom.num_nodes(); ++p)
          shifted.set_node_value(p, shifted.node_value(p) - c0);
        const DiscreteField w = apply_radial_cutoff(shifted, x0, r, k);
        const GradientField gw = gradient(w, qpa);

        std::vector<double> terms;
        for (Index c = 0; c < dom.num_cells(); ++c) {
          if (!mask[c]) continue;
          for (int q = 0; q < gw.nq(); ++q)
            terms.push_back(gw.weight(q) * R.F_cal(x0, alphas[i], gw.at(c, q)));
        }
        rec.value = neumaier_sum(terms) / den;
        res.records.push_back(rec);
        if (r == r_min && k == k_max) tail_values.push_back(rec.value);
      }
    }
  }

  if (!tail_values.empty()) {
    const std::size_t tail = (tail_values.size() + 1) / 2;
    std::vector<double> last(tail_values.end() - tail, tail_values.end());
    res.extrapolated = neumaier_sum(last) / tail;
  }

  // Reference value from the pooled bundle restricted to the smallest ball.
  const int pool = static_cast<int>((seq.size() + 1) / 2);
  const LimitBundle lb = limit_bundle(seq, pool, qpa);
  const std::vector<char> mask = ball_cells(dom, x0, r_min);
  std::vector<MatrixAtom> mu, lambda;
  double mass = 0.0;
  for (Index c = 0; c < dom.num_cells(); ++c) {
    if (!mask[c]) continue;
    mass += lb.pooled.cells[c].mass;
    for (const auto& a : lb.pooled.cells[c].ball) mu.push_back(a);
    for (const auto& a : lb.pooled.cells[c].sphere) lambda.push_back(a);
  }
  if (mass <= 0.0) {
    res.pi_mass_zero = true;
    if (res.note.empty()) res.note = "no gradient mass near the base point";
  } else {
    for (auto& a : mu) a.weight /= mass;
    for (auto& a : lambda) a.weight /= mass;
    res.I_at_x0 = I_functional(x0, mu, lambda, R.as_ul_pair());
  }
  return res;
}

}  // namespace varlocal
