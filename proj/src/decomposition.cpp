#include "varlocal/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "varlocal/util.hpp"

namespace varlocal {

namespace {

// Even reflection of a cell index across the grid ends.
int fold_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

double field_distance(const Domain& dom, const Point& a, const Point& b) {
  double s = 0.0;
  for (int ax = 0; ax < dom.dim(); ++ax) s += (a[ax] - b[ax]) * (a[ax] - b[ax]);
  return std::sqrt(s);
}

Eigen::VectorXd domain_mean(const DiscreteField& f, int qpa) {
  Eigen::VectorXd mean(f.m());
  for (int comp = 0; comp < f.m(); ++comp) {
    mean[comp] = integrate(f.domain(), qpa,
                           [&](Index, int, const Point& x) { return f.interpolate(x)[comp]; }) /
                 f.domain().volume();
  }
  return mean;
}

}  // namespace

std::vector<double> maximal_function(const Domain& dom, const std::vector<double>& g) {
  if (static_cast<Index>(g.size()) != dom.num_cells())
    throw ValidationError("density size does not match the cell count");
  for (double x : g)
    if (x < 0.0) throw ValidationError("maximal function needs a nonnegative density");

  double diam = 0.0;
  for (int a = 0; a < dom.dim(); ++a) diam += dom.length(a) * dom.length(a);
  diam = std::sqrt(diam);
  std::vector<double> radii{0.0};
  for (double r = dom.min_spacing(); r < diam; r *= 2.0) radii.push_back(r);
  radii.push_back(diam);

  // Offset stencils per radius: cell-center distances within r.
  std::vector<std::vector<std::array<int, 3>>> stencils;
  for (double r : radii) {
    std::vector<std::array<int, 3>> offs;
    std::array<int, 3> w{0, 0, 0};
    for (int a = 0; a < dom.dim(); ++a) w[a] = static_cast<int>(std::floor(r / dom.spacing(a)));
    for (int oz = -w[2]; oz <= w[2]; ++oz)
      for (int oy = -w[1]; oy <= w[1]; ++oy)
        for (int ox = -w[0]; ox <= w[0]; ++ox) {
          const double dx = ox * dom.spacing(0);
          const double dy = dom.dim() > 1 ? oy * dom.spacing(1) : 0.0;
          const double dz = dom.dim() > 2 ? oz * dom.spacing(2) : 0.0;
          if (dx * dx + dy * dy + dz * dz <= r * r * (1.0 + 1e-12))
            offs.push_back({ox, oy, oz});
        }
    stencils.push_back(std::move(offs));
  }

  std::vector<double> out(g.size(), 0.0);
  parallel_for(dom.num_cells(), [&](Index c) {
    const auto mc = dom.cell_multi(c);
    double best = 0.0;
    for (const auto& st : stencils) {
      double sum = 0.0;
      for (const auto& o : st) {
        std::array<int, 3> mi{0, 0, 0};
        for (int a = 0; a < dom.dim(); ++a) mi[a] = fold_index(mc[a] + o[a], dom.cells(a));
        sum += g[dom.cell_index(mi)];
      }
      best = std::max(best, sum / static_cast<double>(st.size()));
    }
    out[c] = best;
  });
  return out;
}

double truncate(double s, double j) {
  if (!(j > 0.0)) throw ValidationError("truncation level must be positive");
  return std::abs(s) <= j ? s : (s > 0.0 ? j : -j);
}

SplitResult lipschitz_split(const DiscreteField& psi, double j, double C, int qpa) {
  if (!(j > 0.0)) throw ValidationError("split level must be positive");
  if (!(C > 0.0)) throw ValidationError("split slope constant must be positive");
  const Domain& dom = psi.domain();
  const int m = psi.m();

  const GradientField g = gradient(psi, qpa);
  std::vector<double> dens(dom.num_cells(), 0.0);
  for (Index c = 0; c < dom.num_cells(); ++c) {
    double s = 0.0;
    for (int q = 0; q < g.nq(); ++q) s += g.weight(q) * g.at(c, q).norm();
    dens[c] = s / dom.cell_volume();
  }
  const std::vector<double> mg = maximal_function(dom, dens);

  SplitResult res;
  res.j = j;
  res.R_mask.assign(dom.num_cells(), 0);
  Index masked = 0;
  for (Index c = 0; c < dom.num_cells(); ++c) {
    if (mg[c] >= j) {
      res.R_mask[c] = 1;
      ++masked;
    }
  }
  res.mask_volume = masked * dom.cell_volume();

  // Good nodes: touching at least one unmasked cell.
  std::vector<Index> good;
  for (Index p = 0; p < dom.num_nodes(); ++p) {
    const auto mp = dom.node_multi(p);
    bool ok = false;
    const int nz = dom.dim() > 2 ? 2 : 1;
    const int ny = dom.dim() > 1 ? 2 : 1;
    for (int oz = 0; oz < nz && !ok; ++oz)
      for (int oy = 0; oy < ny && !ok; ++oy)
        for (int ox = 0; ox < 2 && !ok; ++ox) {
          std::array<int, 3> mc{mp[0] - ox, mp[1] - oy, mp[2] - oz};
          bool in = true;
          for (int a = 0; a < dom.dim(); ++a)
            if (mc[a] < 0 || mc[a] >= dom.cells(a)) in = false;
          if (in && !res.R_mask[dom.cell_index(mc)]) ok = true;
        }
    if (ok) good.push_back(p);
  }

  if (good.empty()) {
    res.degenerate = true;
    const Eigen::VectorXd mean = domain_mean(psi, qpa);
    res.mean_shift = mean;
    res.z = DiscreteField(dom, m);
    for (Index p = 0; p < dom.num_nodes(); ++p) res.z.set_node_value(p, mean);
    res.v = psi;
    for (Index p = 0; p < dom.num_nodes(); ++p)
      res.v.set_node_value(p, psi.node_value(p) - mean);
    res.C_effective = C;
    return res;
  }

  std::vector<Point> good_xy(good.size());
  for (std::size_t i = 0; i < good.size(); ++i) good_xy[i] = dom.node_coord(good[i]);

  // The extension reproduces the good values only when its slope dominates
  // the realized Lipschitz constant of psi on the good set, so raise it there
  // when the requested C*j falls short.
  double lip = 0.0;
  for (std::size_t a = 0; a < good.size(); ++a) {
    for (std::size_t b = a + 1; b < good.size(); ++b) {
      const double dist = field_distance(dom, good_xy[a], good_xy[b]);
      for (int comp = 0; comp < m; ++comp) {
        const double dv = std::abs(psi.value(good[a], comp) - psi.value(good[b], comp));
        lip = std::max(lip, dv / dist);
      }
    }
  }
  const double slope = std::max(C * j, lip * (1.0 + 1e-12));
  res.C_effective = slope / j;

  DiscreteField zp(dom, m);
  parallel_for(dom.num_nodes(), [&](Index p) {
    const Point xp = dom.node_coord(p);
    for (int comp = 0; comp < m; ++comp) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < good.size(); ++i) {
        const double cand = psi.value(good[i], comp) + slope * field_distance(dom, xp, good_xy[i]);
        best = std::min(best, cand);
      }
      zp.value(p, comp) = best;
    }
  });

  DiscreteField vp = psi.plus(zp, -1.0);
  const Eigen::VectorXd shift = domain_mean(vp, qpa);
  res.mean_shift = shift;
  res.z = zp;
  res.v = vp;
  for (Index p = 0; p < dom.num_nodes(); ++p) {
    res.z.set_node_value(p, zp.node_value(p) + shift);
    res.v.set_node_value(p, vp.node_value(p) - shift);
  }

  res.grad_z_inf = gradient(res.z, qpa).grad_linf();
  res.C_realized = res.grad_z_inf / j;
  return res;
}

std::vector<double> cell_gradsq_masses(const GradientField& g) {
  std::vector<double> out(g.domain().num_cells(), 0.0);
  for (Index c = 0; c < g.domain().num_cells(); ++c) {
    double s = 0.0;
    for (int q = 0; q < g.nq(); ++q) s += g.weight(q) * g.at(c, q).squaredNorm();
    out[c] = s;
  }
  return out;
}

EquiModulus equi_modulus(const Domain& dom, const std::vector<std::vector<double>>& cell_masses,
                         const std::vector<double>& deltas) {
  if (cell_masses.empty()) throw ValidationError("equiintegrability modulus needs a family");
  for (const auto& cm : cell_masses)
    if (static_cast<Index>(cm.size()) != dom.num_cells())
      throw ValidationError("cell mass vector does not match the grid");

  const double vol = dom.cell_volume();
  EquiModulus em;
  em.deltas = deltas;
  for (double delta : deltas) {
    double worst = 0.0;
    for (const auto& cm : cell_masses) {
      std::vector<double> sorted = cm;
      std::sort(sorted.begin(), sorted.end(), std::greater<double>());
      double taken = 0.0, mass = 0.0;
      for (double cell_mass : sorted) {
        if (taken + vol <= delta) {
          mass += cell_mass;
          taken += vol;
        } else {
          const double frac = std::clamp((delta - taken) / vol, 0.0, 1.0);
          mass += frac * cell_mass;
          break;
        }
      }
      worst = std::max(worst, mass);
    }
    em.values.push_back(worst);
  }
  return em;
}

OrthogonalityCheck orthogonality_residual(const DiscreteField& psi, const DiscreteField& z,
                                          const DiscreteField& v, double alpha,
                                          const ReducedLagrangian& R, int qpa) {
  const Domain& dom = psi.domain();
  if (!z.domain().same_grid(dom) || !v.domain().same_grid(dom) || z.m() != psi.m() ||
      v.m() != psi.m())
    throw ValidationError("split fields must share the grid and range of psi");

  double scale = 0.0, worst = 0.0;
  for (Index p = 0; p < dom.num_nodes(); ++p)
    for (int comp = 0; comp < psi.m(); ++comp) {
      scale = std::max(scale, std::abs(psi.value(p, comp)));
      worst = std::max(worst,
                       std::abs(z.value(p, comp) + v.value(p, comp) - psi.value(p, comp)));
    }
  if (worst > 1e-10 * (1.0 + scale)) throw SplitMismatch("z + v does not reproduce psi");

  const GradientField gp = gradient(psi, qpa);
  const GradientField gz = gradient(z, qpa);
  const GradientField gv = gradient(v, qpa);

  // Cells actually touched by the concentration part.
  const double vtol = 1e-13 * (1.0 + gp.grad_linf());
  std::vector<char> rset(dom.num_cells(), 0);
  for (Index c = 0; c < dom.num_cells(); ++c)
    for (int q = 0; q < gv.nq(); ++q)
      if (gv.at(c, q).norm() > vtol) rset[c] = 1;

  OrthogonalityCheck oc;
  std::vector<double> res_terms, l1_terms, i1_terms, i2_terms, i3_terms;
  for (Index c = 0; c < dom.num_cells(); ++c) {
    for (int q = 0; q < gp.nq(); ++q) {
      const Point x = gp.quad_point(c, q);
      const double w = gp.weight(q);
      const Matrix& Gp = gp.at(c, q);
      const Matrix& Gz = gz.at(c, q);
      const Matrix& Gv = gv.at(c, q);
      const double fp = R.F_cal(x, alpha, Gp);
      const double fz = R.F_cal(x, alpha, Gz);
      const double fv = R.F_cal(x, alpha, Gv);
      res_terms.push_back(w * std::abs(fp - fz - fv));
      l1_terms.push_back(w * std::abs(fp));

      const double np = Gp.norm(), nz = Gz.norm(), nv = Gv.norm();
      i3_terms.push_back(w * R.L_at(x).flat().norm() * nz * nv);
      if (!rset[c]) continue;
      i1_terms.push_back(w * (np + nv) * nz);
      i2_terms.push_back(w * nz * nz);

      const double up = R.U(x, alpha * Gp) * np * np;
      const double uv = R.U(x, alpha * Gv) * nv * nv;
      const double den = (np + nv) * nz;
      if (den > 0.0) oc.c1 = std::max(oc.c1, std::abs(up - uv) / den);
      oc.c2 = std::max(oc.c2, std::abs(R.U(x, alpha * Gz)));
    }
  }
  oc.residual = neumaier_sum(res_terms);
  oc.fcal_psi_l1 = neumaier_sum(l1_terms);
  oc.bound = oc.c1 * neumaier_sum(i1_terms) + oc.c2 * neumaier_sum(i2_terms) +
             neumaier_sum(i3_terms);
  return oc;
}

ZeroPartCheck zeropart_check(const std::vector<DiscreteField>& z_family,
                             const std::vector<double>& alpha_schedule,
                             const ReducedLagrangian& R, int qpa) {
  if (z_family.empty() || z_family.size() != alpha_schedule.size())
    throw ValidationError("z-family and amplitude schedule must align and be nonempty");
  for (std::size_t i = 0; i < alpha_schedule.size(); ++i) {
    if (!(alpha_schedule[i] > 0.0))
      throw ValidationError("amplitudes must be positive");
    if (i > 0 && alpha_schedule[i] >= alpha_schedule[i - 1])
      throw ValidationError("amplitude schedule must decrease");
  }

  ZeroPartCheck out;
  for (std::size_t i = 0; i < z_family.size(); ++i) {
    const double a = alpha_schedule[i];
    const Domain& dom = z_family[i].domain();
    const GradientField g = gradient(z_family[i], qpa);
    std::vector<double> utr, ftot, qtot;
    double gap = 0.0;
    for (Index c = 0; c < dom.num_cells(); ++c) {
      double cf = 0.0, cq = 0.0;
      for (int q = 0; q < g.nq(); ++q) {
        const Point x = g.quad_point(c, q);
        const Matrix& G = g.at(c, q);
        const double w = g.weight(q);
        const double fc = R.F_cal(x, a, G);
        const double qd = 0.5 * R.L_at(x).quadratic_form(G);
        utr.push_back(w * std::abs(R.U(x, a * G)) * G.squaredNorm());
        ftot.push_back(w * fc);
        qtot.push_back(w * qd);
        cf += w * fc;
        cq += w * qd;
      }
      gap = std::max(gap, std::abs(cf - cq) / dom.cell_volume());
    }
    out.u_trace.push_back(neumaier_sum(utr));
    out.fcal_total.push_back(neumaier_sum(ftot));
    out.quad_total.push_back(neumaier_sum(qtot));
    out.cell_gap.push_back(gap);
  }
  return out;
}

PiDecomposition pi_decomposition_check(const VariationSequence& seq,
                                       const std::vector<double>& j_schedule, int pool_tail,
                                       int qpa) {
  if (seq.size() == 0) throw ValidationError("sequence is empty");
  if (j_schedule.size() != 1 && j_schedule.size() != seq.size())
    throw ValidationError("j schedule must broadcast or align with the sequence");

  PiDecomposition pd;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const double j = j_schedule.size() == 1 ? j_schedule[0] : j_schedule[i];
    const SequenceTerm t = seq.term(i);
    PiRow row;
    row.label = seq.labels()[i];
    row.j = j;
    if (t.bm) {
      // Closed-form truncation of the sawtooth gradient at level j.
      const double l2 = t.bm->grad_l2sq();
      const double s = t.bm->slope() / std::sqrt(l2);
      const double mu = t.bm->spike_measure();
      const double zs = std::min(j, s);
      row.pi = mu * s * s;
      row.m_part = mu * zs * zs;
      row.pi_tilde = mu * (s - zs) * (s - zs);
      row.cross = 2.0 * mu * zs * (s - zs);
    } else {
      if (!t.field) throw ValidationError("sequence term carries no field");
      if (t.alpha <= 0.0) throw ZeroVariation("sequence term has zero gradient norm");
      const DiscreteField psi = t.field->scaled(1.0 / t.alpha);
      const SplitResult sp = lipschitz_split(psi, j, 1.0, qpa);
      const GradientField gp = gradient(psi, qpa);
      const GradientField gz = gradient(sp.z, qpa);
      const GradientField gv = gradient(sp.v, qpa);
      row.pi = gp.grad_l2sq();
      row.m_part = gz.grad_l2sq();
      row.pi_tilde = gv.grad_l2sq();
      std::vector<double> cr;
      for (Index c = 0; c < psi.domain().num_cells(); ++c)
        for (int q = 0; q < gz.nq(); ++q)
          cr.push_back(2.0 * gz.weight(q) * frob_inner(gz.at(c, q), gv.at(c, q)));
      row.cross = neumaier_sum(cr);
    }
    row.gap = std::abs(row.pi - row.m_part - row.pi_tilde - row.cross);
    pd.rows.push_back(row);
  }

  const int K = std::clamp<int>(pool_tail, 1, static_cast<int>(pd.rows.size()));
  pd.pool_tail = K;
  for (std::size_t i = pd.rows.size() - K; i < pd.rows.size(); ++i) {
    pd.pooled_pi += pd.rows[i].pi / K;
    pd.pooled_m += pd.rows[i].m_part / K;
    pd.pooled_pi_tilde += pd.rows[i].pi_tilde / K;
    pd.pooled_cross += pd.rows[i].cross / K;
    pd.pooled_gap += pd.rows[i].gap / K;
  }
  return pd;
}

}  // namespace varlocal
