#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "varlocal/errors.hpp"
#include "varlocal/fields.hpp"
#include "varlocal/quadtensor.hpp"

namespace varlocal {

// Value and derivatives of an integrand at one (x, F). Entries beyond the
// requested order are left empty.
struct EvalResult {
  int order = 0;
  double value = 0.0;
  Matrix gradient;      // m x d, order >= 1
  QuadTensor hessian;   // order >= 2
};

// Integrand W(x, F) on matrices F of shape m x d, with derivatives in F.
// smoothness_radius(x, F) is the radius of a ball around F on which W is
// twice continuously differentiable; infinity for globally smooth integrands.
class Lagrangian {
 public:
  using ValueFn = std::function<double(const Point&, const Matrix&)>;
  using GradFn = std::function<Matrix(const Point&, const Matrix&)>;
  using HessFn = std::function<QuadTensor(const Point&, const Matrix&)>;
  using RadiusFn = std::function<double(const Point&, const Matrix&)>;

  Lagrangian() = default;
  Lagrangian(int m, int d, std::string tag, bool x_uniform, ValueFn value, GradFn grad,
             HessFn hess, RadiusFn radius = {});

  int m() const { return m_; }
  int d() const { return d_; }
  const std::string& tag() const { return tag_; }
  bool x_uniform() const { return x_uniform_; }

  double value(const Point& x, const Matrix& F) const;
  Matrix gradient(const Point& x, const Matrix& F) const;
  QuadTensor hessian(const Point& x, const Matrix& F) const;
  double smoothness_radius(const Point& x, const Matrix& F) const;

  EvalResult evaluate(const Point& x, const Matrix& F, int order) const;

 private:
  int m_ = 0, d_ = 0;
  std::string tag_;
  bool x_uniform_ = true;
  ValueFn value_;
  GradFn grad_;
  HessFn hess_;
  RadiusFn radius_;
};

// c * |F|^2.
Lagrangian make_quadratic(int m, int d, double c);

// det F on 2x2 matrices. A null integrand: every field has the same energy
// under fixed boundary values.
Lagrangian make_det2();

// One term of a polynomial in the entries of F. powers[k] is the exponent of
// entry F(k / d, k % d) and must have size m*d.
struct Monomial {
  double coeff = 0.0;
  std::vector<int> powers;
};

Lagrangian make_polynomial(int m, int d, std::vector<Monomial> monomials);

// One well of a minimum-of-quadratics integrand:
// curvature * |F - shift|^2 + offset.
struct QuadBranch {
  Matrix shift;
  double offset = 0.0;
  double curvature = 1.0;
};

// W(F) = min over branches. Smooth except on the switching surfaces between
// wells; smoothness_radius reports the exact distance to the nearest one.
Lagrangian make_min_quadratic(int m, int d, std::vector<QuadBranch> branches);

// (1/2) (L F, F) for a constant coefficient tensor.
Lagrangian make_quadratic_form(int m, int d, QuadTensor L);

// (1/2) (L(x) F, F) with spatially varying coefficients.
Lagrangian make_quadratic_form(int m, int d, std::function<QuadTensor(const Point&)> L);

// W(x, F) - beta * |F|^2. Subtracting a null-ish quadratic shifts every
// pointwise quantity by an explicitly computable amount.
Lagrangian shift_by_quadratic(const Lagrangian& W, double beta);

// Pair (U, L) describing a reduced integrand through its exact expansion
// Wr(x, F) = (1/2)(L(x) F, F) + |F|^2 U(x, F) with U(x, 0) = 0.
struct ULPair {
  std::function<double(const Point&, const Matrix&)> U;
  std::function<QuadTensor(const Point&)> L;
};

// (U, L) evaluation of the rescaled integrand at amplitude alpha:
// U(x, alpha G) |G|^2 + (1/2)(L(x) G, G).
double eval_F_cal(const ULPair& ul, const Point& x, double alpha, const Matrix& G);

// Reduction of W around a base gradient field A(x):
//   Wr(x, F) = W(x, A(x) + F) - W(x, A(x)) - (W_F(x, A(x)), F).
// Wr vanishes to second order at F = 0; its Hessian there is L(x).
class ReducedLagrangian {
 public:
  ReducedLagrangian() = default;
  ReducedLagrangian(Lagrangian base, std::function<Matrix(const Point&)> base_grad,
                    bool base_x_uniform);

  int m() const { return base_.m(); }
  int d() const { return base_.d(); }
  const Lagrangian& base() const { return base_; }
  bool x_uniform() const { return x_uniform_; }

  Matrix base_gradient(const Point& x) const { return base_grad_(x); }

  double value(const Point& x, const Matrix& F) const;
  Matrix gradient(const Point& x, const Matrix& F) const;
  QuadTensor hessian(const Point& x, const Matrix& F) const;

  // Hessian of the base integrand along the base field, L(x) = W_FF(x, A(x)).
  QuadTensor L_at(const Point& x) const;

  // Remainder coefficient in Wr = (1/2)(L F, F) + |F|^2 U(x, F). Returns 0
  // when |F| <= 1e-14 so the removable singularity never divides by zero.
  double U(const Point& x, const Matrix& F) const;

  // Rescaled integrand F(x, alpha, G) = Wr(x, alpha G) / alpha^2, evaluated
  // through the (U, L) expansion. Finite at alpha -> 0 by construction.
  double F_cal(const Point& x, double alpha, const Matrix& G) const;

  // Same quantity by direct division; used to cross-check the expansion.
  double F_cal_direct(const Point& x, double alpha, const Matrix& G) const;

  // Wr packaged as an integrand in its own right, so it can be reduced again
  // or fed to any routine expecting a Lagrangian.
  Lagrangian as_lagrangian() const;

  ULPair as_ul_pair() const;

 private:
  Lagrangian base_;
  std::function<Matrix(const Point&)> base_grad_;
  bool x_uniform_ = false;
};

// Reduce around an arbitrary gradient-valued function of x.
ReducedLagrangian reduce(const Lagrangian& W, std::function<Matrix(const Point&)> base_grad);

// Reduce around the constant matrix A. The result is x-uniform whenever W is.
ReducedLagrangian reduce_constant(const Lagrangian& W, const Matrix& A);

// Reduce around the (cellwise multilinear) gradient of a discrete field.
ReducedLagrangian reduce_at_field(const Lagrangian& W, const DiscreteField& y);

}  // namespace varlocal
