#include "varlocal/conditions.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>

#include "varlocal/util.hpp"

namespace varlocal {

namespace {

constexpr double kViolationTol = 1e-9;

// Cells incident to a node, in corner order; -1 for slots outside the grid.
std::array<Index, 8> incident_cells(const Domain& dom, Index p) {
  std::array<Index, 8> out;
  out.fill(-1);
  auto mp = dom.node_multi(p);
  const int nslots = 1 << dom.dim();
  for (int s = 0; s < nslots; ++s) {
    std::array<int, 3> mc{0, 0, 0};
    bool ok = true;
    for (int a = 0; a < dom.dim(); ++a) {
      mc[a] = mp[a] - 1 + ((s >> a) & 1);
      if (mc[a] < 0 || mc[a] >= dom.cells(a)) ok = false;
    }
    if (ok) out[s] = dom.cell_index(mc);
  }
  return out;
}

}  // namespace

Eigen::MatrixXd el_residual_rows(const Lagrangian& W, const DiscreteField& y, int qpa) {
  const Domain& dom = y.domain();
  GradientField g = gradient(y, qpa);
  const CellQuadrature& cq = g.quadrature();
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(dom.num_nodes(), y.m());
  for (Index c = 0; c < dom.num_cells(); ++c) {
    for (int q = 0; q < cq.nq; ++q) {
      Matrix P = W.evaluate(g.quad_point(c, q), g.at(c, q), 1).gradient;
      for (int b = 0; b < cq.ncorner; ++b) {
        Index p = dom.cell_node(c, b);
        if (dom.node_dirichlet(p)) continue;
        for (int i = 0; i < y.m(); ++i) {
          double v = 0.0;
          for (int j = 0; j < cq.dim; ++j)
            v += P(i, j) * cq.dshape[(q * cq.ncorner + b) * cq.dim + j];
          rows(p, i) += cq.weight[q] * v;
        }
      }
    }
  }
  return rows;
}

ElResidual el_residual(const Lagrangian& W, const DiscreteField& y, int qpa) {
  const Domain& dom = y.domain();
  Eigen::MatrixXd rows = el_residual_rows(W, y, qpa);
  ElResidual r;
  double i2 = 0.0, b2 = 0.0, worst = -1.0;
  for (Index p = 0; p < dom.num_nodes(); ++p) {
    if (dom.node_dirichlet(p)) continue;
    bool on_free_face = dom.node_on_boundary(p);
    for (int i = 0; i < y.m(); ++i) {
      double v = std::abs(rows(p, i));
      if (on_free_face) {
        b2 += v * v;
        r.boundary_linf = std::max(r.boundary_linf, v);
      } else {
        i2 += v * v;
        r.interior_linf = std::max(r.interior_linf, v);
      }
      if (v > worst) {
        worst = v;
        r.worst_node = p;
        r.worst_comp = i;
      }
    }
  }
  r.interior_l2 = std::sqrt(i2);
  r.boundary_l2 = std::sqrt(b2);
  return r;
}

ProbeGeometry ProbeGeometry::full_domain(const Domain& dom) {
  ProbeGeometry g;
  g.box = dom;
  g.kind = "full";
  g.cell_active.assign(dom.num_cells(), 1);
  g.node_free.assign(dom.num_nodes(), 0);
  for (Index p = 0; p < dom.num_nodes(); ++p) g.node_free[p] = dom.node_dirichlet(p) ? 0 : 1;
  return g;
}

namespace {

ProbeGeometry masked_geometry(int d, int res, int axis, int sign, bool half) {
  if (res < 4) throw ResolutionTooCoarse("probe grid resolution must be >= 4");
  ProbeGeometry g;
  g.box = Domain::centered_box(d, res);
  g.kind = half ? "half-ball" : "ball";
  g.normal_axis = half ? axis : -1;
  g.normal_sign = half ? sign : 0;
  const Domain& dom = g.box;
  g.cell_active.assign(dom.num_cells(), 0);
  for (Index c = 0; c < dom.num_cells(); ++c) {
    Point ctr = dom.cell_center(c);
    bool in = ctr.head(d).squaredNorm() < 1.0;
    if (half) in = in && ctr[axis] * sign < 0.0;
    g.cell_active[c] = in ? 1 : 0;
  }
  g.node_free.assign(dom.num_nodes(), 0);
  const int nslots = 1 << d;
  for (Index p = 0; p < dom.num_nodes(); ++p) {
    auto mp = dom.node_multi(p);
    bool free_node = true, touches_active = false;
    for (int s = 0; s < nslots && free_node; ++s) {
      std::array<int, 3> mc{0, 0, 0};
      bool valid = true;
      for (int a = 0; a < d; ++a) {
        mc[a] = mp[a] - 1 + ((s >> a) & 1);
        if (mc[a] < 0 || mc[a] >= dom.cells(a)) valid = false;
      }
      bool required = true;
      if (half) {
        // Slot center along the normal axis; slots on the outward side are
        // outside the half ball and put no constraint on the node.
        double ctr_n = dom.origin(axis) + (mc[axis] + 0.5) * dom.spacing(axis);
        required = ctr_n * sign < 0.0;
      }
      if (!required) continue;
      if (!valid || !g.cell_active[dom.cell_index(mc)])
        free_node = false;
      else
        touches_active = true;
    }
    g.node_free[p] = (free_node && touches_active) ? 1 : 0;
  }
  return g;
}

}  // namespace

ProbeGeometry ProbeGeometry::unit_ball(int d, int res) {
  return masked_geometry(d, res, 0, 0, false);
}

ProbeGeometry ProbeGeometry::half_ball(int d, int res, int axis, int sign) {
  if (axis < 0 || axis >= d || (sign != 1 && sign != -1))
    throw ValidationError("half-ball normal must be +/- a coordinate axis");
  return masked_geometry(d, res, axis, sign, true);
}

Index ProbeGeometry::active_cells() const {
  Index n = 0;
  for (char c : cell_active) n += c;
  return n;
}

double ProbeGeometry::active_volume() const { return active_cells() * box.cell_volume(); }

SecondVariationForm SecondVariationForm::assemble(const Domain& dom, int m,
                                                  const std::function<QuadTensor(const Point&)>& L,
                                                  int qpa) {
  return assemble(ProbeGeometry::full_domain(dom), m, L, qpa);
}

SecondVariationForm SecondVariationForm::assemble(const ProbeGeometry& geom, int m,
                                                  const std::function<QuadTensor(const Point&)>& L,
                                                  int qpa) {
  return assemble_masked(geom.box, m, L, qpa, geom.cell_active, geom.node_free);
}

SecondVariationForm SecondVariationForm::assemble_masked(
    const Domain& dom, int m, const std::function<QuadTensor(const Point&)>& L, int qpa,
    const std::vector<char>& cell_active, const std::vector<char>& node_free) {
  SecondVariationForm f;
  f.dom_ = dom;
  f.m_ = m;
  f.qpa_ = qpa;
  f.lfield_ = L;
  f.cell_active_ = cell_active;

  const int d = dom.dim();
  f.node_to_dof_.assign(dom.num_nodes(), -1);
  bool any_pinned_touching = false;
  for (Index p = 0; p < dom.num_nodes(); ++p) {
    bool touches = false;
    for (Index c : incident_cells(dom, p))
      if (c >= 0 && cell_active[c]) touches = true;
    if (!touches) continue;
    if (node_free[p]) {
      f.node_to_dof_[p] = static_cast<Index>(f.free_nodes_.size());
      f.free_nodes_.push_back(p);
    } else {
      any_pinned_touching = true;
    }
  }
  f.needs_deflation_ = !any_pinned_touching;
  const Index n = f.n_dofs();
  if (n == 0) throw ValidationError("second variation has no free degrees of freedom");

  CellQuadrature cq = CellQuadrature::make(dom, qpa);
  GradientField coords(dom, 1, qpa);  // quadrature point lookup

  std::vector<Eigen::Triplet<double>> ta, tb;
  ta.reserve(dom.num_cells() * cq.ncorner * cq.ncorner * m * m);
  tb.reserve(dom.num_cells() * cq.ncorner * cq.ncorner * m);
  std::vector<double> g1(d), g2(d);
  for (Index c = 0; c < dom.num_cells(); ++c) {
    if (!cell_active[c]) continue;
    for (int q = 0; q < cq.nq; ++q) {
      const Eigen::MatrixXd lf = L(coords.quad_point(c, q)).flat();
      const double w = cq.weight[q];
      for (int b1 = 0; b1 < cq.ncorner; ++b1) {
        Index p1 = dom.cell_node(c, b1);
        Index f1 = f.node_to_dof_[p1];
        if (f1 < 0) continue;
        for (int j = 0; j < d; ++j) g1[j] = cq.dshape[(q * cq.ncorner + b1) * cq.dim + j];
        for (int b2 = 0; b2 < cq.ncorner; ++b2) {
          Index p2 = dom.cell_node(c, b2);
          Index f2 = f.node_to_dof_[p2];
          if (f2 < 0) continue;
          for (int j = 0; j < d; ++j) g2[j] = cq.dshape[(q * cq.ncorner + b2) * cq.dim + j];
          double dot = 0.0;
          for (int j = 0; j < d; ++j) dot += g1[j] * g2[j];
          for (int i = 0; i < m; ++i) {
            tb.emplace_back(f1 * m + i, f2 * m + i, w * dot);
            for (int k = 0; k < m; ++k) {
              double v = 0.0;
              for (int j = 0; j < d; ++j)
                for (int l = 0; l < d; ++l) v += lf(i * d + j, k * d + l) * g1[j] * g2[l];
              ta.emplace_back(f1 * m + i, f2 * m + k, w * v);
            }
          }
        }
      }
    }
  }
  f.A_.resize(n, n);
  f.A_.setFromTriplets(ta.begin(), ta.end());
  f.B_.resize(n, n);
  f.B_.setFromTriplets(tb.begin(), tb.end());
  Eigen::SparseMatrix<double> at = f.A_.transpose();
  f.A_ = 0.5 * (f.A_ + at);
  f.A_.makeCompressed();
  f.B_.makeCompressed();
  return f;
}

double SecondVariationForm::max_asymmetry() const {
  Eigen::SparseMatrix<double> at = A_.transpose();
  Eigen::SparseMatrix<double> diff = A_ - at;
  double mx = 0.0;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(diff, k); it; ++it)
      mx = std::max(mx, std::abs(it.value()));
  return mx;
}

Eigen::VectorXd SecondVariationForm::restrict_field(const DiscreteField& phi) const {
  if (!phi.domain().same_grid(dom_) || phi.m() != m_)
    throw ValidationError("field does not match the assembled form");
  Eigen::VectorXd v(n_dofs());
  for (size_t fi = 0; fi < free_nodes_.size(); ++fi)
    for (int i = 0; i < m_; ++i) v[static_cast<Index>(fi) * m_ + i] = phi.value(free_nodes_[fi], i);
  return v;
}

DiscreteField SecondVariationForm::extend(const Eigen::VectorXd& dofs) const {
  if (dofs.size() != n_dofs()) throw ValidationError("dof vector has wrong size");
  DiscreteField phi(dom_, m_);
  for (size_t fi = 0; fi < free_nodes_.size(); ++fi)
    for (int i = 0; i < m_; ++i) phi.value(free_nodes_[fi], i) = dofs[static_cast<Index>(fi) * m_ + i];
  return phi;
}

double SecondVariationForm::direct_energy(const DiscreteField& phi) const {
  GradientField g = gradient(phi, qpa_);
  const CellQuadrature& cq = g.quadrature();
  std::vector<double> terms;
  for (Index c = 0; c < dom_.num_cells(); ++c) {
    if (!cell_active_[c]) continue;
    for (int q = 0; q < cq.nq; ++q)
      terms.push_back(cq.weight[q] * lfield_(g.quad_point(c, q)).quadratic_form(g.at(c, q)));
  }
  return neumaier_sum(terms);
}

double SecondVariationForm::direct_normalizer(const DiscreteField& phi) const {
  GradientField g = gradient(phi, qpa_);
  const CellQuadrature& cq = g.quadrature();
  std::vector<double> terms;
  for (Index c = 0; c < dom_.num_cells(); ++c) {
    if (!cell_active_[c]) continue;
    for (int q = 0; q < cq.nq; ++q) terms.push_back(cq.weight[q] * g.at(c, q).squaredNorm());
  }
  return neumaier_sum(terms);
}

namespace {

// Submatrix on the kept index set, preserving symmetry and sparsity.
Eigen::SparseMatrix<double> take(const Eigen::SparseMatrix<double>& M,
                                 const std::vector<Index>& keep_of_full, Index nkeep) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(M.nonZeros());
  for (int k = 0; k < M.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(M, k); it; ++it) {
      Index r = keep_of_full[it.row()], c = keep_of_full[it.col()];
      if (r >= 0 && c >= 0) t.emplace_back(r, c, it.value());
    }
  Eigen::SparseMatrix<double> out(nkeep, nkeep);
  out.setFromTriplets(t.begin(), t.end());
  out.makeCompressed();
  return out;
}

}  // namespace

RayleighResult second_variation_min_rayleigh(const SecondVariationForm& form,
                                             const RayleighOptions& opts) {
  const Index nfull = form.n_dofs();
  const int m = form.m();

  // A fully free (pure traction) assembly carries per-component constants in
  // the joint nullspace. Pinning one node's components picks a representative
  // of each quotient class without changing any Rayleigh quotient.
  std::vector<Index> keep(nfull, -1);
  Index n = 0;
  for (Index i = 0; i < nfull; ++i) {
    if (form.needs_deflation() && i < m) continue;
    keep[i] = n++;
  }
  if (n == 0) throw ValidationError("second variation space is empty after deflation");
  Eigen::SparseMatrix<double> A = take(form.stiffness(), keep, n);
  Eigen::SparseMatrix<double> B = take(form.normalizer(), keep, n);

  RayleighResult res;
  double anorm = A.norm();
  if (anorm == 0.0) {
    res.beta = 0.0;
    res.converged = true;
    return res;
  }

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> bf(B);
  if (bf.info() != Eigen::Success)
    throw ValidationError("normalizer factorization failed; grid may be degenerate");

  Rng rng(substream(opts.seed, 7));

  // Stage 1: bound the pencil spectrum by power iteration on the inverse-
  // normalizer operator, B-normalized.
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i) x[i] = rng.sym();
  double s = 0.0;
  for (int it = 0; it < 40; ++it) {
    Eigen::VectorXd bx = B * x;
    double bn = std::sqrt(std::max(x.dot(bx), 1e-300));
    x /= bn;
    double lam = x.dot(A * x);
    s = std::max(s, std::abs(lam));
    x = bf.solve(A * x);
  }
  if (s == 0.0) s = anorm;

  // Stage 2: Lanczos in the B inner product on (A - sigma B)^{-1} B, fully
  // reorthogonalized, restarted with the shift moved toward the smallest
  // Ritz value. A Krylov space cannot settle on an interior eigenvalue the
  // way a blindly refined shift-invert block can: the extreme Ritz value
  // converges monotonically from above, so each restart keeps the shift
  // below the minimum by the residual enclosure plus a spread margin.
  double sigma = -1.25 * s - 1e-12 * (1.0 + s);
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  auto factor = [&](double sg) {
    Eigen::SparseMatrix<double> M = A - sg * B;
    M.makeCompressed();
    lu.compute(M);
    return lu.info() == Eigen::Success;
  };
  if (!factor(sigma)) throw ValidationError("shifted operator factorization failed");

  const Index kdim = std::min<Index>(n, std::max(24, 12 * std::max(opts.block, 1)));
  Eigen::VectorXd x0(n);
  for (Index i = 0; i < n; ++i) x0[i] = rng.sym();

  double lam = 0.0, rel = 1.0, err = 0.0;
  Eigen::VectorXd xr;
  int ops = 0;
  while (ops < opts.max_iter) {
    Eigen::MatrixXd V(n, kdim), BV(n, kdim);
    Eigen::VectorXd alpha(kdim), beta(kdim);
    Eigen::VectorXd bx = B * x0;
    double bn = std::sqrt(std::max(x0.dot(bx), 1e-300));
    V.col(0) = x0 / bn;
    BV.col(0) = bx / bn;
    Index k = 0;
    for (Index j = 0; j < kdim && ops < opts.max_iter; ++j, ++ops) {
      Eigen::VectorXd w = lu.solve(BV.col(j));
      alpha[j] = w.dot(BV.col(j));
      k = j + 1;
      if (j + 1 == kdim) break;
      for (int pass = 0; pass < 2; ++pass)
        for (Index i = 0; i <= j; ++i) w -= w.dot(BV.col(i)) * V.col(i);
      Eigen::VectorXd bw = B * w;
      double nb = std::sqrt(std::max(w.dot(bw), 0.0));
      beta[j] = nb;
      if (nb <= 1e-14 * (1.0 + std::abs(alpha[j]))) break;
      V.col(j + 1) = w / nb;
      BV.col(j + 1) = bw / nb;
    }

    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
    for (Index j = 0; j < k; ++j) {
      T(j, j) = alpha[j];
      if (j + 1 < k) T(j, j + 1) = T(j + 1, j) = beta[j];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);

    // theta = 1/(lambda - sigma), so the smallest pencil value is the
    // largest theta when sigma sits below the spectrum and the most
    // negative theta if a refinement ever overshoots.
    Index best = -1;
    double lam_best = 0.0;
    for (Index j = 0; j < k; ++j) {
      double th = es.eigenvalues()[j];
      if (th == 0.0) continue;
      double cand = sigma + 1.0 / th;
      if (best < 0 || cand < lam_best) {
        best = j;
        lam_best = cand;
      }
    }
    if (best < 0) break;

    xr = V.leftCols(k) * es.eigenvectors().col(best);
    double xb = std::sqrt(std::max(xr.dot(B * xr), 1e-300));
    xr /= xb;
    lam = xr.dot(A * xr);
    Eigen::VectorXd r = A * xr - lam * (B * xr);
    double scale = (A * xr).norm() + std::abs(lam) * (B * xr).norm() + 1e-300;
    rel = r.norm() / scale;
    Eigen::VectorXd e = bf.solve(r);
    err = std::sqrt(std::max(0.0, r.dot(e)));
    if (rel <= opts.tol) {
      res.converged = true;
      break;
    }

    double spread = std::max(s - lam, 1e-3 * std::max(s, 1.0));
    double cand = lam - 3.0 * err - 0.05 * spread;
    if (cand > sigma && factor(cand))
      sigma = cand;
    else
      factor(sigma);
    x0 = xr;
    for (Index i = 0; i < n; ++i) x0[i] += 1e-8 * rng.sym();
  }

  if (xr.size() == 0) {
    res.beta = 0.0;
    return res;
  }
  res.beta = lam;
  res.iterations = ops;
  res.residual = rel;
  res.interval_lo = lam - err;
  res.interval_hi = lam + err;
  return res;
}

namespace {

// Fast repeated evaluation of the probe objective on one geometry: value,
// denominator and dof-space gradient of N/D over the active cells only.
class ProbeEvaluator {
 public:
  ProbeEvaluator(const ReducedLagrangian& R, const Point& x0, const ProbeGeometry& geom, int qpa)
      : R_(&R), x0_(x0), geom_(&geom), cq_(CellQuadrature::make(geom.box, qpa)), m_(R.m()) {
    const Domain& dom = geom.box;
    node_dof_.assign(dom.num_nodes(), -1);
    for (Index p = 0; p < dom.num_nodes(); ++p)
      if (geom.node_free[p]) {
        node_dof_[p] = static_cast<Index>(free_nodes_.size());
        free_nodes_.push_back(p);
      }
    for (Index c = 0; c < dom.num_cells(); ++c)
      if (geom.cell_active[c]) cells_.push_back(c);
    cell_nodes_.resize(cells_.size() * cq_.ncorner);
    for (size_t ci = 0; ci < cells_.size(); ++ci)
      for (int bb = 0; bb < cq_.ncorner; ++bb)
        cell_nodes_[ci * cq_.ncorner + bb] = dom.cell_node(cells_[ci], bb);
  }

  Index n_dofs() const { return static_cast<Index>(free_nodes_.size()) * m_; }
  const std::vector<Index>& free_nodes() const { return free_nodes_; }

  Matrix grad_at(const Eigen::VectorXd& dofs, size_t ci, int q) const {
    const int d = geom_->box.dim();
    Matrix G = Matrix::Zero(m_, d);
    for (int bb = 0; bb < cq_.ncorner; ++bb) {
      Index dof = node_dof_[cell_nodes_[ci * cq_.ncorner + bb]];
      if (dof < 0) continue;
      for (int a = 0; a < d; ++a) {
        double ds = cq_.dshape[(q * cq_.ncorner + bb) * cq_.dim + a];
        for (int i = 0; i < m_; ++i) G(i, a) += ds * dofs[dof * m_ + i];
      }
    }
    return G;
  }

  ProbeObjective objective(const Eigen::VectorXd& dofs) const {
    std::vector<double> tn, td;
    tn.reserve(cells_.size() * cq_.nq);
    td.reserve(cells_.size() * cq_.nq);
    for (size_t ci = 0; ci < cells_.size(); ++ci)
      for (int q = 0; q < cq_.nq; ++q) {
        Matrix G = grad_at(dofs, ci, q);
        tn.push_back(cq_.weight[q] * R_->value(x0_, G));
        td.push_back(cq_.weight[q] * G.squaredNorm());
      }
    ProbeObjective o;
    o.numerator = neumaier_sum(tn);
    o.denominator = neumaier_sum(td);
    if (o.denominator <= 0.0) throw ZeroVariation("probe field has zero gradient norm");
    o.value = o.numerator / o.denominator;
    return o;
  }

  // Gradient of N/D at dofs; also returns the objective parts.
  ProbeObjective objective_gradient(const Eigen::VectorXd& dofs, Eigen::VectorXd& g) const {
    Eigen::VectorXd gn = Eigen::VectorXd::Zero(n_dofs());
    Eigen::VectorXd gd = Eigen::VectorXd::Zero(n_dofs());
    std::vector<double> tn, td;
    tn.reserve(cells_.size() * cq_.nq);
    td.reserve(cells_.size() * cq_.nq);
    const int d = geom_->box.dim();
    for (size_t ci = 0; ci < cells_.size(); ++ci)
      for (int q = 0; q < cq_.nq; ++q) {
        Matrix G = grad_at(dofs, ci, q);
        tn.push_back(cq_.weight[q] * R_->value(x0_, G));
        td.push_back(cq_.weight[q] * G.squaredNorm());
        Matrix P = R_->gradient(x0_, G);
        for (int bb = 0; bb < cq_.ncorner; ++bb) {
          Index dof = node_dof_[cell_nodes_[ci * cq_.ncorner + bb]];
          if (dof < 0) continue;
          for (int i = 0; i < m_; ++i) {
            double vp = 0.0, vg = 0.0;
            for (int a = 0; a < d; ++a) {
              double ds = cq_.dshape[(q * cq_.ncorner + bb) * cq_.dim + a];
              vp += P(i, a) * ds;
              vg += G(i, a) * ds;
            }
            gn[dof * m_ + i] += cq_.weight[q] * vp;
            gd[dof * m_ + i] += cq_.weight[q] * 2.0 * vg;
          }
        }
      }
    ProbeObjective o;
    o.numerator = neumaier_sum(tn);
    o.denominator = neumaier_sum(td);
    if (o.denominator <= 0.0) throw ZeroVariation("probe field has zero gradient norm");
    o.value = o.numerator / o.denominator;
    g = (gn - o.value * gd) / o.denominator;
    return o;
  }

  DiscreteField extend(const Eigen::VectorXd& dofs) const {
    DiscreteField phi(geom_->box, m_);
    for (size_t fi = 0; fi < free_nodes_.size(); ++fi)
      for (int i = 0; i < m_; ++i)
        phi.value(free_nodes_[fi], i) = dofs[static_cast<Index>(fi) * m_ + i];
    return phi;
  }

  Eigen::VectorXd restrict_field(const DiscreteField& phi) const {
    Eigen::VectorXd v(n_dofs());
    for (size_t fi = 0; fi < free_nodes_.size(); ++fi)
      for (int i = 0; i < m_; ++i)
        v[static_cast<Index>(fi) * m_ + i] = phi.value(free_nodes_[fi], i);
    return v;
  }

 private:
  const ReducedLagrangian* R_;
  Point x0_;
  const ProbeGeometry* geom_;
  CellQuadrature cq_;
  int m_;
  std::vector<Index> node_dof_, free_nodes_, cells_;
  std::vector<Index> cell_nodes_;
};

struct RestartOutcome {
  double value = 0.0;
  int iters = 0;
  Eigen::VectorXd dofs;
};

RestartOutcome descend(const ProbeEvaluator& ev, Rng rng, int max_iters) {
  const Index n = ev.n_dofs();
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i) x[i] = rng.sym();
  ProbeObjective o = ev.objective(x);
  x /= std::sqrt(o.denominator);
  double f = o.value;

  Eigen::VectorXd g(n);
  double step = 1.0;
  int it = 0, stall = 0;
  for (; it < max_iters; ++it) {
    ProbeObjective og = ev.objective_gradient(x, g);
    f = og.value;
    double gn2 = g.squaredNorm();
    if (gn2 <= 1e-26 * std::max(1.0, f * f)) break;
    bool accepted = false;
    double t = step;
    for (int bs = 0; bs < 50; ++bs) {
      Eigen::VectorXd cand = x - t * g;
      double cn2 = cand.squaredNorm();
      if (cn2 > 0.0) {
        ProbeObjective oc;
        bool ok = true;
        try {
          oc = ev.objective(cand);
        } catch (const ZeroVariation&) {
          ok = false;
        }
        if (ok && oc.value <= f - 1e-4 * t * gn2) {
          x = cand / std::sqrt(oc.denominator);
          if (std::abs(f - oc.value) <= 1e-15 * std::max(1.0, std::abs(f)))
            ++stall;
          else
            stall = 0;
          f = oc.value;
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted) break;
    step = std::min(t * 2.0, 1e6);
    if (stall >= 3) break;
  }
  RestartOutcome out;
  out.value = f;
  out.iters = it;
  out.dofs = x;
  return out;
}

QCProbeResult run_probe(const ReducedLagrangian& R, const Point& x0, const ProbeGeometry& geom,
                        const ProbeBudget& budget, std::uint64_t seed) {
  ProbeEvaluator ev(R, x0, geom, 2);
  if (ev.n_dofs() == 0) throw ValidationError("probe geometry has no free nodes");

  std::vector<RestartOutcome> outs(budget.multistarts);
  parallel_for(budget.multistarts, [&](std::int64_t r) {
    outs[r] = descend(ev, Rng(substream(seed, static_cast<std::uint64_t>(r))), budget.iters);
  });

  QCProbeResult res;
  res.x0 = x0;
  res.geometry = geom.kind;
  res.seed = seed;
  res.best_restart = 0;
  for (int r = 0; r < budget.multistarts; ++r) {
    res.restart_values.push_back(outs[r].value);
    res.restart_iters.push_back(outs[r].iters);
    if (outs[r].value < outs[res.best_restart].value) res.best_restart = r;
  }
  res.best_value = outs[res.best_restart].value;
  res.best_field = ev.extend(outs[res.best_restart].dofs);
  res.violation = res.best_value < -kViolationTol;
  return res;
}

}  // namespace

ProbeObjective probe_objective(const ReducedLagrangian& R, const Point& x0,
                               const ProbeGeometry& geom, const DiscreteField& phi, int qpa) {
  if (!phi.domain().same_grid(geom.box)) throw ValidationError("field is not on the probe grid");
  ProbeEvaluator ev(R, x0, geom, qpa);
  return ev.objective(ev.restrict_field(phi));
}

QCProbeResult qc_interior_probe(const ReducedLagrangian& R, const Point& x0,
                                const ProbeBudget& budget, std::uint64_t seed) {
  ProbeGeometry geom = ProbeGeometry::unit_ball(R.d(), budget.grid_res);
  return run_probe(R, x0, geom, budget, seed);
}

QCProbeResult qc_boundary_probe(const ReducedLagrangian& R, const Point& x0, int axis, int sign,
                                const ProbeBudget& budget, std::uint64_t seed) {
  ProbeGeometry geom = ProbeGeometry::half_ball(R.d(), budget.grid_res, axis, sign);
  return run_probe(R, x0, geom, budget, seed);
}

QCProbeResult qc_boundary_probe(const ReducedLagrangian& R, const Domain& dom, const Point& x0,
                                const ProbeBudget& budget, std::uint64_t seed) {
  for (int a = 0; a < dom.dim(); ++a)
    for (int side = 0; side < 2; ++side) {
      double coord = dom.origin(a) + (side == 1 ? dom.length(a) : 0.0);
      if (std::abs(x0[a] - coord) > 1e-12) continue;
      if (dom.face(a, side) != FaceLabel::free_face) continue;
      return qc_boundary_probe(R, x0, a, side == 1 ? 1 : -1, budget, seed);
    }
  throw InvalidBasePoint("point is not on a free face of the domain");
}

CertificateReport sufficiency_certificate(const Lagrangian& W, const DiscreteField& y,
                                          const CertificateOptions& opts) {
  const Domain& dom = y.domain();
  CertificateReport rep;
  rep.seed = opts.seed;

  rep.el = el_residual(W, y, opts.qpa);
  rep.el_pass = rep.el.max_linf() <= opts.el_tol;
  if (!rep.el_pass) {
    rep.verdict = "inconclusive";
    rep.reason = "EL residual above tolerance";
    return rep;
  }

  ReducedLagrangian R = reduce_at_field(W, y);
  auto lfn = [R](const Point& x) { return R.L_at(x); };
  SecondVariationForm form = SecondVariationForm::assemble(dom, y.m(), lfn, opts.qpa);
  RayleighOptions ropts = opts.rayleigh;
  ropts.seed = substream(opts.seed, 1);
  rep.secvar = second_variation_min_rayleigh(form, ropts);
  if (!rep.secvar.converged) {
    rep.verdict = "inconclusive";
    rep.reason = "second-variation eigeniteration did not converge";
    return rep;
  }
  if (rep.secvar.beta < -opts.violation_tol) {
    rep.verdict = "violated";
    rep.reason = "second variation attains negative values";
    rep.beta_candidate = 0.5 * rep.secvar.beta;
    return rep;
  }

  std::vector<Point> ipts = opts.interior_points;
  if (ipts.empty()) {
    Point ctr = Point::Zero();
    for (int a = 0; a < dom.dim(); ++a) ctr[a] = dom.origin(a) + 0.5 * dom.length(a);
    ipts.push_back(ctr);
  }
  auto bpts = opts.boundary_points;
  if (bpts.empty()) {
    for (int a = 0; a < dom.dim(); ++a)
      for (int side = 0; side < 2; ++side) {
        if (dom.face(a, side) != FaceLabel::free_face) continue;
        Point ctr = Point::Zero();
        for (int aa = 0; aa < dom.dim(); ++aa) ctr[aa] = dom.origin(aa) + 0.5 * dom.length(aa);
        ctr[a] = dom.origin(a) + (side == 1 ? dom.length(a) : 0.0);
        bpts.push_back({ctr, {a, side == 1 ? 1 : -1}});
      }
  }

  // The energy increment carries half of the second variation, so the
  // Rayleigh value is halved before comparing with the probe objectives.
  double beta = 0.5 * rep.secvar.beta;
  std::uint64_t probe_tag = 100;
  for (const Point& p : ipts) {
    rep.interior_probes.push_back(
        qc_interior_probe(R, p, opts.budget, substream(opts.seed, probe_tag++)));
    beta = std::min(beta, rep.interior_probes.back().best_value);
  }
  for (const auto& bp : bpts) {
    rep.boundary_probes.push_back(qc_boundary_probe(R, bp.first, bp.second.first, bp.second.second,
                                                    opts.budget,
                                                    substream(opts.seed, probe_tag++)));
    beta = std::min(beta, rep.boundary_probes.back().best_value);
  }

  rep.beta_candidate = beta;
  for (const auto& pr : rep.interior_probes)
    if (pr.violation) {
      rep.verdict = "violated";
      rep.reason = "interior quasiconvexity probe found a negative direction";
      return rep;
    }
  for (const auto& pr : rep.boundary_probes)
    if (pr.violation) {
      rep.verdict = "violated";
      rep.reason = "boundary quasiconvexity probe found a negative direction";
      return rep;
    }
  rep.verdict = "sufficient-candidate";
  rep.reason = "all probes nonnegative; search-based candidate, not a proof";
  return rep;
}

DiscreteField solve_extremal(const Lagrangian& W, const Domain& dom, const BoundaryData& g,
                             const NewtonOptions& opts) {
  if (!dom.has_dirichlet_face())
    throw ValidationError("extremal solve needs at least one Dirichlet face");
  const int m = W.m();
  DiscreteField y(dom, m);
  for (size_t i = 0; i < g.nodes.size(); ++i)
    y.set_node_value(g.nodes[i], g.values.row(static_cast<Index>(i)).transpose());

  auto free_residual = [&](const DiscreteField& yy, const SecondVariationForm& form) {
    Eigen::MatrixXd rows = el_residual_rows(W, yy, opts.qpa);
    Eigen::VectorXd r(form.n_dofs());
    const auto& fn = form.free_nodes();
    for (size_t fi = 0; fi < fn.size(); ++fi)
      for (int i = 0; i < m; ++i) r[static_cast<Index>(fi) * m + i] = rows(fn[fi], i);
    return r;
  };

  for (int it = 0; it < opts.max_iter; ++it) {
    auto yp = std::make_shared<DiscreteField>(y);
    auto lfn = [&W, yp](const Point& x) { return W.hessian(x, yp->gradient_at(x)); };
    SecondVariationForm form = SecondVariationForm::assemble(dom, m, lfn, opts.qpa);
    Eigen::VectorXd r = free_residual(y, form);
    double rn = r.lpNorm<Eigen::Infinity>();
    if (rn <= opts.tol) return y;

    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(form.stiffness());
    if (lu.info() != Eigen::Success) throw ValidationError("Newton tangent factorization failed");
    Eigen::VectorXd delta = lu.solve(-r);
    DiscreteField dir = form.extend(delta);
    double t = 1.0;
    for (int bs = 0; bs < 30; ++bs) {
      DiscreteField cand = y.plus(dir, t);
      Eigen::VectorXd rc = free_residual(cand, form);
      if (rc.lpNorm<Eigen::Infinity>() <= (1.0 - 1e-4 * t) * rn) {
        y = cand;
        break;
      }
      t *= 0.5;
      if (bs == 29) throw ValidationError("Newton line search failed to reduce the residual");
    }
  }
  Eigen::MatrixXd rows = el_residual_rows(W, y, opts.qpa);
  double rn = rows.cwiseAbs().maxCoeff();
  if (rn > opts.tol) throw ValidationError("Newton did not reach the residual tolerance");
  return y;
}

}  // namespace varlocal
