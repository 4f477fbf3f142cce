#include "varlocal/lagrangian.hpp"

#include <cmath>
#include <utility>

namespace varlocal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double ipow(double x, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= x;
  return r;
}

void check_shape(const Matrix& F, int m, int d, const char* who) {
  if (F.rows() != m || F.cols() != d)
    throw ValidationError(std::string(who) + ": argument has wrong shape");
}

}  // namespace

Lagrangian::Lagrangian(int m, int d, std::string tag, bool x_uniform, ValueFn value, GradFn grad,
                       HessFn hess, RadiusFn radius)
    : m_(m),
      d_(d),
      tag_(std::move(tag)),
      x_uniform_(x_uniform),
      value_(std::move(value)),
      grad_(std::move(grad)),
      hess_(std::move(hess)),
      radius_(std::move(radius)) {}

double Lagrangian::value(const Point& x, const Matrix& F) const {
  check_shape(F, m_, d_, "Lagrangian::value");
  if (!value_) throw ValidationError("Lagrangian has no value function");
  return value_(x, F);
}

Matrix Lagrangian::gradient(const Point& x, const Matrix& F) const {
  check_shape(F, m_, d_, "Lagrangian::gradient");
  if (!grad_) throw ValidationError("Lagrangian has no gradient function");
  return grad_(x, F);
}

QuadTensor Lagrangian::hessian(const Point& x, const Matrix& F) const {
  check_shape(F, m_, d_, "Lagrangian::hessian");
  if (!hess_) throw ValidationError("Lagrangian has no hessian function");
  return hess_(x, F);
}

double Lagrangian::smoothness_radius(const Point& x, const Matrix& F) const {
  check_shape(F, m_, d_, "Lagrangian::smoothness_radius");
  return radius_ ? radius_(x, F) : kInf;
}

EvalResult Lagrangian::evaluate(const Point& x, const Matrix& F, int order) const {
  if (order < 0 || order > 2) throw ValidationError("evaluation order must be 0, 1 or 2");
  if (order >= 1 && !(smoothness_radius(x, F) > 0.0))
    throw OutOfSmoothnessRegion("derivative requested outside the C2 region");
  EvalResult r;
  r.order = order;
  r.value = value(x, F);
  if (order >= 1) r.gradient = gradient(x, F);
  if (order >= 2) r.hessian = hessian(x, F);
  return r;
}

Lagrangian make_quadratic(int m, int d, double c) {
  return Lagrangian(
      m, d, "quad", true,
      [c](const Point&, const Matrix& F) { return c * F.squaredNorm(); },
      [c](const Point&, const Matrix& F) -> Matrix { return 2.0 * c * F; },
      [m, d, c](const Point&, const Matrix&) {
        QuadTensor t = QuadTensor::identity(m, d);
        t *= 2.0 * c;
        return t;
      });
}

Lagrangian make_det2() {
  QuadTensor hess(2, 2);
  hess.set_sym(0, 0, 1, 1, 1.0);   // d2(det)/dF11 dF22
  hess.set_sym(0, 1, 1, 0, -1.0);  // d2(det)/dF12 dF21
  return Lagrangian(
      2, 2, "det2", true,
      [](const Point&, const Matrix& F) { return F(0, 0) * F(1, 1) - F(0, 1) * F(1, 0); },
      [](const Point&, const Matrix& F) -> Matrix {
        Matrix g(2, 2);
        g << F(1, 1), -F(1, 0), -F(0, 1), F(0, 0);
        return g;
      },
      [hess](const Point&, const Matrix&) { return hess; });
}

Lagrangian make_polynomial(int m, int d, std::vector<Monomial> monomials) {
  const int n = m * d;
  for (const Monomial& mo : monomials) {
    if (static_cast<int>(mo.powers.size()) != n)
      throw ValidationError("monomial power list must have m*d entries");
    for (int p : mo.powers)
      if (p < 0) throw ValidationError("monomial powers must be nonnegative");
  }
  auto mono_factor = [n](const Monomial& mo, const Eigen::VectorXd& f, int skip1, int skip2) {
    double r = mo.coeff;
    for (int k = 0; k < n; ++k) {
      int p = mo.powers[k];
      if (k == skip1) --p;
      if (k == skip2) --p;
      r *= ipow(f[k], p);
    }
    return r;
  };
  return Lagrangian(
      m, d, "poly", true,
      [monomials, mono_factor](const Point&, const Matrix& F) {
        Eigen::VectorXd f = vectorize(F);
        double v = 0.0;
        for (const Monomial& mo : monomials) v += mono_factor(mo, f, -1, -1);
        return v;
      },
      [m, d, n, monomials, mono_factor](const Point&, const Matrix& F) -> Matrix {
        Eigen::VectorXd f = vectorize(F);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
        for (const Monomial& mo : monomials)
          for (int k = 0; k < n; ++k) {
            if (mo.powers[k] == 0) continue;
            g[k] += mo.powers[k] * mono_factor(mo, f, k, -1);
          }
        return unvectorize(m, d, g);
      },
      [m, d, n, monomials, mono_factor](const Point&, const Matrix& F) {
        Eigen::VectorXd f = vectorize(F);
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
        for (const Monomial& mo : monomials)
          for (int k = 0; k < n; ++k) {
            if (mo.powers[k] == 0) continue;
            for (int l = 0; l < n; ++l) {
              int pl = mo.powers[l] - (l == k ? 1 : 0);
              if (pl <= 0) continue;
              h(k, l) += mo.powers[k] * pl * mono_factor(mo, f, k, l);
            }
          }
        return QuadTensor::from_flat(m, d, h);
      });
}

namespace {

double branch_value(const QuadBranch& b, const Matrix& F) {
  return b.curvature * (F - b.shift).squaredNorm() + b.offset;
}

int active_branch(const std::vector<QuadBranch>& bs, const Matrix& F) {
  int best = 0;
  double bv = branch_value(bs[0], F);
  for (size_t i = 1; i < bs.size(); ++i) {
    double v = branch_value(bs[i], F);
    if (v < bv) {
      bv = v;
      best = static_cast<int>(i);
    }
  }
  return best;
}

// Distance from F to the locus where branches i and j exchange the minimum.
// Equal curvatures give a hyperplane, unequal ones a sphere; coincident
// branches never switch.
double switch_distance(const QuadBranch& bi, const QuadBranch& bj, const Matrix& F) {
  const double ci = bi.curvature, cj = bj.curvature;
  if (ci == cj) {
    Matrix dS = bj.shift - bi.shift;
    double nrm = dS.norm();
    if (nrm == 0.0) return kInf;
    double diff = branch_value(bi, F) - branch_value(bj, F);
    return std::abs(diff) / (2.0 * ci * nrm);
  }
  Matrix C = (ci * bi.shift - cj * bj.shift) / (ci - cj);
  double r2 = C.squaredNorm() -
              (ci * bi.shift.squaredNorm() - cj * bj.shift.squaredNorm() + bi.offset - bj.offset) /
                  (ci - cj);
  if (r2 < 0.0) return kInf;
  return std::abs((F - C).norm() - std::sqrt(r2));
}

}  // namespace

Lagrangian make_min_quadratic(int m, int d, std::vector<QuadBranch> branches) {
  if (branches.empty()) throw ValidationError("min-quadratic integrand needs at least one branch");
  for (const QuadBranch& b : branches) {
    if (b.shift.rows() != m || b.shift.cols() != d)
      throw ValidationError("branch shift has wrong shape");
    if (!(b.curvature > 0.0)) throw ValidationError("branch curvatures must be positive");
  }
  return Lagrangian(
      m, d, "minquad", true,
      [branches](const Point&, const Matrix& F) {
        return branch_value(branches[active_branch(branches, F)], F);
      },
      [branches](const Point&, const Matrix& F) -> Matrix {
        const QuadBranch& b = branches[active_branch(branches, F)];
        return 2.0 * b.curvature * (F - b.shift);
      },
      [m, d, branches](const Point&, const Matrix& F) {
        const QuadBranch& b = branches[active_branch(branches, F)];
        QuadTensor t = QuadTensor::identity(m, d);
        t *= 2.0 * b.curvature;
        return t;
      },
      [branches](const Point&, const Matrix& F) {
        int a = active_branch(branches, F);
        double r = kInf;
        for (size_t j = 0; j < branches.size(); ++j) {
          if (static_cast<int>(j) == a) continue;
          r = std::min(r, switch_distance(branches[a], branches[j], F));
        }
        return r;
      });
}

Lagrangian make_quadratic_form(int m, int d, QuadTensor L) {
  if (L.rows() != m || L.cols() != d)
    throw ValidationError("coefficient tensor has wrong size");
  return Lagrangian(
      m, d, "quadform", true,
      [L](const Point&, const Matrix& F) { return 0.5 * L.quadratic_form(F); },
      [L](const Point&, const Matrix& F) { return L.apply(F); },
      [L](const Point&, const Matrix&) { return L; });
}

Lagrangian make_quadratic_form(int m, int d, std::function<QuadTensor(const Point&)> L) {
  return Lagrangian(
      m, d, "quadform-x", false,
      [L](const Point& x, const Matrix& F) { return 0.5 * L(x).quadratic_form(F); },
      [L](const Point& x, const Matrix& F) { return L(x).apply(F); },
      [L](const Point& x, const Matrix&) { return L(x); });
}

Lagrangian shift_by_quadratic(const Lagrangian& W, double beta) {
  const int m = W.m(), d = W.d();
  return Lagrangian(
      m, d, W.tag() + "-shifted", W.x_uniform(),
      [W, beta](const Point& x, const Matrix& F) { return W.value(x, F) - beta * F.squaredNorm(); },
      [W, beta](const Point& x, const Matrix& F) -> Matrix {
        return W.gradient(x, F) - 2.0 * beta * F;
      },
      [W, beta, m, d](const Point& x, const Matrix& F) {
        QuadTensor t = QuadTensor::identity(m, d);
        t *= -2.0 * beta;
        return W.hessian(x, F) + t;
      },
      [W](const Point& x, const Matrix& F) { return W.smoothness_radius(x, F); });
}

double eval_F_cal(const ULPair& ul, const Point& x, double alpha, const Matrix& G) {
  return ul.U(x, alpha * G) * G.squaredNorm() + 0.5 * ul.L(x).quadratic_form(G);
}

ReducedLagrangian::ReducedLagrangian(Lagrangian base, std::function<Matrix(const Point&)> base_grad,
                                     bool base_x_uniform)
    : base_(std::move(base)),
      base_grad_(std::move(base_grad)),
      x_uniform_(base_.x_uniform() && base_x_uniform) {}

double ReducedLagrangian::value(const Point& x, const Matrix& F) const {
  Matrix A = base_grad_(x);
  EvalResult at_base = base_.evaluate(x, A, 1);
  return base_.value(x, A + F) - at_base.value - frob_inner(at_base.gradient, F);
}

Matrix ReducedLagrangian::gradient(const Point& x, const Matrix& F) const {
  Matrix A = base_grad_(x);
  return base_.gradient(x, A + F) - base_.gradient(x, A);
}

QuadTensor ReducedLagrangian::hessian(const Point& x, const Matrix& F) const {
  return base_.hessian(x, base_grad_(x) + F);
}

QuadTensor ReducedLagrangian::L_at(const Point& x) const {
  return base_.hessian(x, base_grad_(x));
}

double ReducedLagrangian::U(const Point& x, const Matrix& F) const {
  double n2 = F.squaredNorm();
  if (std::sqrt(n2) <= 1e-14) return 0.0;
  return (value(x, F) - 0.5 * L_at(x).quadratic_form(F)) / n2;
}

double ReducedLagrangian::F_cal(const Point& x, double alpha, const Matrix& G) const {
  return U(x, alpha * G) * G.squaredNorm() + 0.5 * L_at(x).quadratic_form(G);
}

double ReducedLagrangian::F_cal_direct(const Point& x, double alpha, const Matrix& G) const {
  if (alpha == 0.0) throw ValidationError("F_cal_direct needs a nonzero amplitude");
  return value(x, alpha * G) / (alpha * alpha);
}

Lagrangian ReducedLagrangian::as_lagrangian() const {
  ReducedLagrangian self = *this;
  return Lagrangian(
      m(), d(), base_.tag() + "-reduced", x_uniform_,
      [self](const Point& x, const Matrix& F) { return self.value(x, F); },
      [self](const Point& x, const Matrix& F) { return self.gradient(x, F); },
      [self](const Point& x, const Matrix& F) { return self.hessian(x, F); },
      [self](const Point& x, const Matrix& F) {
        return self.base_.smoothness_radius(x, self.base_grad_(x) + F);
      });
}

ULPair ReducedLagrangian::as_ul_pair() const {
  ReducedLagrangian self = *this;
  ULPair ul;
  ul.U = [self](const Point& x, const Matrix& F) { return self.U(x, F); };
  ul.L = [self](const Point& x) { return self.L_at(x); };
  return ul;
}

ReducedLagrangian reduce(const Lagrangian& W, std::function<Matrix(const Point&)> base_grad) {
  return ReducedLagrangian(W, std::move(base_grad), false);
}

ReducedLagrangian reduce_constant(const Lagrangian& W, const Matrix& A) {
  if (A.rows() != W.m() || A.cols() != W.d())
    throw ValidationError("base gradient has wrong shape");
  return ReducedLagrangian(W, [A](const Point&) { return A; }, true);
}

ReducedLagrangian reduce_at_field(const Lagrangian& W, const DiscreteField& y) {
  if (y.m() != W.m() || y.domain().dim() != W.d())
    throw ValidationError("extremal field does not match integrand shape");
  auto yp = std::make_shared<DiscreteField>(y);
  return ReducedLagrangian(
      W, [yp](const Point& x) { return yp->gradient_at(x); }, false);
}

}  // namespace varlocal
