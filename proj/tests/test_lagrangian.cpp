#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "varlocal/errors.hpp"
#include "varlocal/lagrangian.hpp"
#include "varlocal/util.hpp"

using namespace varlocal;

namespace {

Point zero_point() { return Point::Zero(); }

Matrix random_matrix(int m, int d, Rng& rng, double amp = 1.0) {
  Matrix F(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) F(i, j) = amp * rng.sym();
  return F;
}

}  // namespace

TEST_CASE("quadratic integrand at the identity matrix") {
  Lagrangian W = make_quadratic(2, 2, 1.0);
  Matrix I2 = Matrix::Identity(2, 2);
  EvalResult e = W.evaluate(zero_point(), I2, 2);
  CHECK(e.value == doctest::Approx(2.0).epsilon(1e-15));
  CHECK((e.gradient - 2.0 * I2).norm() < 1e-15);
  QuadTensor twoI = 2.0 * QuadTensor::identity(2, 2);
  CHECK((e.hessian.flat() - twoI.flat()).norm() < 1e-15);
}

TEST_CASE("determinant integrand expands like cofactors") {
  Lagrangian W = make_det2();
  Matrix F(2, 2);
  F << 1, 2, 3, 4;
  EvalResult e = W.evaluate(zero_point(), F, 1);
  CHECK(e.value == doctest::Approx(-2.0).epsilon(1e-15));
  Matrix cof(2, 2);
  cof << 4, -3, -2, 1;
  CHECK((e.gradient - cof).norm() < 1e-15);

  QuadTensor H = W.hessian(zero_point(), F);
  QuadTensor Hfd = oracles::fd_hessian(W, zero_point(), F);
  CHECK((H.flat() - Hfd.flat()).norm() < 1e-6);
}

TEST_CASE("branch-wise minimum follows the active branch") {
  // W = min(|F|^2, |F - I|^2 + 1); the two parabolas meet on a plane through
  // 0.75 * I.
  Matrix A = Matrix::Identity(2, 2);
  std::vector<QuadBranch> branches;
  branches.push_back({Matrix::Zero(2, 2), 0.0, 1.0});
  branches.push_back({A, 1.0, 1.0});
  Lagrangian W = make_min_quadratic(2, 2, branches);

  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix F = random_matrix(2, 2, rng, 2.0);
    double b0 = F.squaredNorm();
    double b1 = (F - A).squaredNorm() + 1.0;
    CHECK(W.value(zero_point(), F) == doctest::Approx(std::min(b0, b1)).epsilon(1e-14));
    if (std::abs(b0 - b1) > 1e-3) {
      Matrix g = b0 < b1 ? (2.0 * F).eval() : (2.0 * (F - A)).eval();
      CHECK((W.gradient(zero_point(), F) - g).norm() < 1e-13);
    }
  }

  Matrix kink = 0.75 * A;
  CHECK(std::abs(kink.squaredNorm() - ((kink - A).squaredNorm() + 1.0)) < 1e-15);
  CHECK_THROWS_AS(W.evaluate(zero_point(), kink, 2), OutOfSmoothnessRegion);
  // Derivative queries through evaluate() gate on the smoothness radius,
  // which collapses to zero on the tie set; the raw accessors still answer
  // with the active branch.
  CHECK_THROWS_AS(W.evaluate(zero_point(), kink, 1), OutOfSmoothnessRegion);
  CHECK(W.value(zero_point(), kink) == doctest::Approx(kink.squaredNorm()));
  CHECK_NOTHROW(W.gradient(zero_point(), kink));
  // Away from the kink the branch is a plain quadratic again.
  CHECK_NOTHROW(W.evaluate(zero_point(), (3.0 * A).eval(), 2));
}

TEST_CASE("analytic derivatives match finite differences") {
  Rng rng(29);
  std::vector<Lagrangian> zoo;
  zoo.push_back(make_quadratic(2, 2, 0.7));
  zoo.push_back(make_det2());
  zoo.push_back(oracles::random_poly_lagrangian(2, 2, rng));
  zoo.push_back(make_quadratic_form(2, 2, oracles::random_sym_quadtensor(2, 2, rng)));
  std::vector<QuadBranch> branches;
  branches.push_back({Matrix::Zero(2, 2), 0.0, 1.0});
  branches.push_back({(5.0 * Matrix::Identity(2, 2)).eval(), 0.5, 2.0});
  zoo.push_back(make_min_quadratic(2, 2, branches));

  for (const Lagrangian& W : zoo) {
    for (int trial = 0; trial < 10; ++trial) {
      Matrix F = random_matrix(W.m(), W.d(), rng, 0.8);
      Point x = zero_point();
      x[0] = rng.uniform();
      x[1] = rng.uniform();
      Matrix g = W.gradient(x, F);
      Matrix gfd = oracles::fd_gradient(W, x, F);
      CHECK((g - gfd).norm() <= 1e-5 * (1.0 + g.norm()));
      QuadTensor H = W.hessian(x, F);
      QuadTensor Hfd = oracles::fd_hessian(W, x, F);
      CHECK((H.flat() - Hfd.flat()).norm() <= 1e-4 * (1.0 + H.flat().norm()));
      CHECK(H.max_asymmetry() < 1e-12);
    }
  }
}

TEST_CASE("reduction cancels the base state") {
  Domain dom = Domain::unit_box(2, 4);
  Matrix A(2, 2);
  A << 0.4, -0.2, 0.1, 0.9;
  Rng rng(31);

  ReducedLagrangian Rq = reduce_constant(make_quadratic(2, 2, 1.0), A);
  ReducedLagrangian Rd = reduce_constant(make_det2(), A);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix F = random_matrix(2, 2, rng);
    Point x = zero_point();
    CHECK(Rq.value(x, F) == doctest::Approx(F.squaredNorm()).epsilon(1e-13));
    CHECK(Rd.value(x, F) == doctest::Approx(F.determinant()).epsilon(1e-12));
  }

  Lagrangian poly = oracles::random_poly_lagrangian(2, 2, rng);
  ReducedLagrangian Rp = reduce_constant(poly, A);
  CHECK(Rp.value(zero_point(), Matrix::Zero(2, 2)) == 0.0);
  CHECK(Rp.gradient(zero_point(), Matrix::Zero(2, 2)).norm() < 1e-12);

  // Decomposition identity: the quadratic part plus the weighted remainder
  // reassembles the reduced value wherever it is evaluated.
  for (int trial = 0; trial < 50; ++trial) {
    Matrix F = random_matrix(2, 2, rng, 0.5);
    Point x = zero_point();
    double w = Rp.value(x, F);
    double quad = 0.5 * Rp.L_at(x).quadratic_form(F);
    double rem = F.squaredNorm() * Rp.U(x, F);
    CHECK(std::abs(w - quad - rem) <= 1e-12 * std::max(1.0, std::abs(w)));
  }
}

TEST_CASE("reduction is a projection") {
  Rng rng(37);
  Matrix A(2, 2);
  A << 1.0, 0.0, 0.0, 1.0;

  ReducedLagrangian R1 = reduce_constant(make_quadratic(2, 2, 1.0), A);
  ReducedLagrangian R2 = reduce_constant(R1.as_lagrangian(), Matrix::Zero(2, 2));
  for (int trial = 0; trial < 20; ++trial) {
    Matrix F = random_matrix(2, 2, rng);
    CHECK(R2.value(zero_point(), F) == doctest::Approx(F.squaredNorm()).epsilon(1e-13));
  }

  ReducedLagrangian D1 = reduce_constant(make_det2(), A);
  ReducedLagrangian D2 = reduce_constant(D1.as_lagrangian(), Matrix::Zero(2, 2));
  for (int trial = 0; trial < 20; ++trial) {
    Matrix F = random_matrix(2, 2, rng);
    CHECK(D2.value(zero_point(), F) == doctest::Approx(F.determinant()).epsilon(1e-12));
  }

  Lagrangian poly = oracles::random_poly_lagrangian(2, 2, rng);
  Matrix B = random_matrix(2, 2, rng, 0.5);
  ReducedLagrangian P1 = reduce_constant(poly, B);
  ReducedLagrangian P2 = reduce_constant(P1.as_lagrangian(), Matrix::Zero(2, 2));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix F = random_matrix(2, 2, rng);
    worst = std::max(worst,
                     std::abs(P2.value(zero_point(), F) - P1.value(zero_point(), F)));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("the rescaled integrand is two-homogeneous the right way") {
  Rng rng(43);
  Matrix A = Matrix::Zero(2, 2);
  ReducedLagrangian Rq = reduce_constant(make_quadratic(2, 2, 1.0), A);
  ReducedLagrangian Rd = reduce_constant(make_det2(), Matrix::Identity(2, 2));
  for (double alpha : {1.0, 0.3, 1e-3}) {
    for (int trial = 0; trial < 10; ++trial) {
      Matrix G = random_matrix(2, 2, rng);
      CHECK(Rq.F_cal(zero_point(), alpha, G) ==
            doctest::Approx(G.squaredNorm()).epsilon(1e-10));
      CHECK(Rd.F_cal(zero_point(), alpha, G) ==
            doctest::Approx(G.determinant()).epsilon(1e-9));
    }
  }

  // Shrinking alpha leaves only the quadratic part, with O(alpha) remainder.
  Lagrangian poly = oracles::random_poly_lagrangian(2, 2, rng);
  ReducedLagrangian Rp = reduce_constant(poly, Matrix::Zero(2, 2));
  Matrix G = random_matrix(2, 2, rng);
  double quad = 0.5 * Rp.L_at(zero_point()).quadratic_form(G);
  double prev = -1.0;
  for (double alpha : {1e-1, 1e-2, 1e-3}) {
    double err = std::abs(Rp.F_cal(zero_point(), alpha, G) - quad);
    if (prev >= 0.0) CHECK(err < 0.2 * prev);
    prev = err;
  }

  // The two evaluation routes agree.
  ULPair ul = Rp.as_ul_pair();
  for (int trial = 0; trial < 20; ++trial) {
    Matrix G2 = random_matrix(2, 2, rng);
    double a = rng.range(0.1, 2.0);
    CHECK(eval_F_cal(ul, zero_point(), a, G2) ==
          doctest::Approx(Rp.F_cal(zero_point(), a, G2)).epsilon(1e-12));
    CHECK(Rp.F_cal_direct(zero_point(), a, G2) ==
          doctest::Approx(Rp.F_cal(zero_point(), a, G2)).epsilon(1e-9));
  }
}

TEST_CASE("quadratic shifts of the integrand") {
  Rng rng(47);
  Lagrangian W = make_quadratic(2, 2, 1.0);

  Lagrangian same = shift_by_quadratic(W, 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix F = random_matrix(2, 2, rng);
    CHECK(same.value(zero_point(), F) == doctest::Approx(W.value(zero_point(), F)));
  }

  // Shifting |F|^2 by its own modulus leaves a flat reduced integrand.
  Lagrangian flat = shift_by_quadratic(W, 1.0);
  ReducedLagrangian Rflat = reduce_constant(flat, Matrix::Zero(2, 2));
  for (int trial = 0; trial < 20; ++trial) {
    Matrix F = random_matrix(2, 2, rng);
    CHECK(std::abs(Rflat.value(zero_point(), F)) < 1e-13);
  }

  Lagrangian poly = oracles::random_poly_lagrangian(2, 2, rng);
  Matrix A = random_matrix(2, 2, rng, 0.5);
  Lagrangian shifted = shift_by_quadratic(poly, 0.3);
  ReducedLagrangian R0 = reduce_constant(poly, A);
  ReducedLagrangian R3 = reduce_constant(shifted, A);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix F = random_matrix(2, 2, rng);
    double lhs = R3.value(zero_point(), F) + 0.3 * F.squaredNorm();
    worst = std::max(worst, std::abs(lhs - R0.value(zero_point(), F)));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("reduction follows a non-constant extremal gradient") {
  Domain dom = Domain::unit_box(2, 8);
  DiscreteField y = DiscreteField::from_function(dom, 1, [](const Point& x) {
    Eigen::VectorXd v(1);
    v[0] = x[0] * x[0];
    return v;
  });
  Lagrangian W = make_quadratic(1, 2, 1.0);
  ReducedLagrangian R = reduce_at_field(W, y);
  // For |F|^2 the base state cancels no matter what the extremal is.
  Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix F = random_matrix(1, 2, rng);
    Point x = zero_point();
    x[0] = rng.uniform();
    x[1] = rng.uniform();
    CHECK(R.value(x, F) == doctest::Approx(F.squaredNorm()).epsilon(1e-12));
    CHECK((R.L_at(x).flat() - 2.0 * QuadTensor::identity(1, 2).flat()).norm() < 1e-12);
  }
}

TEST_CASE("smoothness gates keep second derivatives honest") {
  std::vector<QuadBranch> branches;
  branches.push_back({Matrix::Zero(2, 2), 0.0, 1.0});
  branches.push_back({Matrix::Identity(2, 2), 0.25, 1.0});
  Lagrangian W = make_min_quadratic(2, 2, branches);
  CHECK(W.smoothness_radius(zero_point(), Matrix::Zero(2, 2)) > 0.0);
  CHECK(W.smoothness_radius(zero_point(), Matrix::Zero(2, 2)) < 1e30);
  // Quadratics are smooth everywhere and advertise it.
  CHECK(make_quadratic(2, 2, 1.0).smoothness_radius(zero_point(), Matrix::Zero(2, 2)) >
        1e30);
}
