#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "varlocal/conditions.hpp"
#include "varlocal/errors.hpp"
#include "varlocal/lagrangian.hpp"
#include "varlocal/util.hpp"

using namespace varlocal;

namespace {

Domain all_free_box(int dim, int n) { return Domain::unit_box(dim, n, FaceLabel::free_face); }

BoundaryData dirichlet_data(const Domain& dom, int m,
                            const std::function<Eigen::VectorXd(const Point&)>& g) {
  BoundaryData bd;
  for (Index p = 0; p < dom.num_nodes(); ++p)
    if (dom.node_dirichlet(p)) bd.nodes.push_back(p);
  bd.values.resize(static_cast<Index>(bd.nodes.size()), m);
  for (std::size_t i = 0; i < bd.nodes.size(); ++i)
    bd.values.row(static_cast<Index>(i)) = g(dom.node_coord(bd.nodes[i])).transpose();
  return bd;
}

}  // namespace

TEST_CASE("constant stress extremals have zero residual") {
  // W = |F - A|^2 has zero stress at F = A, so the affine map is an extremal
  // with zero traction on every free face.
  Matrix A(2, 2);
  A << 0.6, -0.3, 0.2, 1.1;
  std::vector<QuadBranch> one;
  one.push_back({A, 0.0, 1.0});
  Lagrangian W = make_min_quadratic(2, 2, one);
  Domain dom = all_free_box(2, 8);
  DiscreteField y = DiscreteField::from_function(
      dom, 2, [&](const Point& x) { return Eigen::VectorXd(A * x.head(2)); });
  ElResidual r = el_residual(W, y, 2);
  CHECK(r.interior_linf < 1e-12);
  CHECK(r.boundary_linf < 1e-12);
  CHECK(r.max_linf() < 1e-12);
}

TEST_CASE("a manufactured laplacian leaves a visible residual") {
  Lagrangian W = make_quadratic(1, 2, 0.5);
  Domain dom = Domain::unit_box(2, 8);
  DiscreteField y = DiscreteField::from_function(dom, 1, [](const Point& x) {
    Eigen::VectorXd v(1);
    v[0] = x[0] * x[0];
    return v;
  });
  ElResidual r = el_residual(W, y, 2);
  // Delta y = 2, tested against hat functions: each interior row carries the
  // mass of its hat, so the residual scales like 2 * h^2 and cannot vanish.
  CHECK(r.interior_linf > 1e-3);
  CHECK(r.worst_node >= 0);
  CHECK(r.worst_comp == 0);
}

TEST_CASE("a solved extremal has numerically zero residual") {
  Lagrangian W = make_quadratic(1, 2, 0.5);
  Domain dom = Domain::unit_box(2, 12);
  BoundaryData g = dirichlet_data(dom, 1, [](const Point& x) {
    Eigen::VectorXd v(1);
    v[0] = x[0] * x[0] - x[1] * x[1];
    return v;
  });
  DiscreteField y = solve_extremal(W, dom, g);
  ElResidual r = el_residual(W, y, 2);
  CHECK(r.interior_l2 < 1e-10);
  CHECK(r.interior_linf < 1e-10);
  // Prescribed values survive the solve.
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    CHECK(y.value(g.nodes[i], 0) == doctest::Approx(g.values(static_cast<Index>(i), 0)));
}

TEST_CASE("newton recovers an affine minimizer in one sweep") {
  Lagrangian W = make_quadratic(2, 2, 1.0);
  Domain dom = Domain::unit_box(2, 6);
  Matrix A(2, 2);
  A << 1.0, 0.5, -0.2, 0.8;
  Eigen::VectorXd b(2);
  b << 0.1, -0.4;
  DiscreteField y = solve_extremal(W, dom, BoundaryData::from_affine(dom, A, b));
  for (Index p = 0; p < dom.num_nodes(); ++p) {
    Point x = dom.node_coord(p);
    Eigen::VectorXd exact = A * x.head(2) + b;
    CHECK((y.node_value(p) - exact).norm() < 1e-10);
  }
  CHECK_THROWS_AS(solve_extremal(W, all_free_box(2, 6), BoundaryData{}), ValidationError);
}

TEST_CASE("uniform forms give their constant as the minimum") {
  const double c = 0.7;
  auto lfield = [c](const Point&) {
    QuadTensor t = QuadTensor::identity(2, 2);
    t *= c;
    return t;
  };
  SecondVariationForm form = SecondVariationForm::assemble(Domain::unit_box(2, 8), 2, lfield, 2);
  RayleighResult r = second_variation_min_rayleigh(form);
  CHECK(r.converged);
  CHECK(std::abs(r.beta - c) < 1e-9);
}

TEST_CASE("an indefinite axis drives the minimum to minus one") {
  // Free faces admit phi = (0, f(x2)), which scores exactly -1 on the last
  // diagonal weight.
  Eigen::VectorXd w(4);
  w << 1.0, 1.0, 1.0, -1.0;
  auto lfield = [&](const Point&) { return QuadTensor::diagonal(2, 2, w); };
  SecondVariationForm form = SecondVariationForm::assemble(all_free_box(2, 8), 2, lfield, 2);
  CHECK(form.needs_deflation());
  RayleighResult r = second_variation_min_rayleigh(form);
  CHECK(r.converged);
  CHECK(std::abs(r.beta - (-1.0)) < 1e-8);
  CHECK(std::abs(r.beta - oracles::dense_min_rayleigh(form)) < 1e-8);
}

TEST_CASE("refinement moves the smooth-field minimum slowly") {
  auto lfield = [](const Point& x) {
    QuadTensor t = QuadTensor::identity(2, 2);
    t *= 1.0 + 0.25 * std::sin(M_PI * x[0]) * std::cos(M_PI * x[1]);
    return t;
  };
  double beta[2];
  int idx = 0;
  for (int n : {8, 16}) {
    SecondVariationForm form = SecondVariationForm::assemble(Domain::unit_box(2, n), 2, lfield, 2);
    RayleighResult r = second_variation_min_rayleigh(form);
    REQUIRE(r.converged);
    CHECK(std::abs(r.beta - oracles::dense_min_rayleigh(form)) < 1e-8);
    beta[idx++] = r.beta;
  }
  CHECK(std::abs(beta[1] - beta[0]) <= 0.05 * std::abs(beta[0]));
}

TEST_CASE("assembly agrees with direct quadrature") {
  Rng rng(61);
  QuadTensor L0 = oracles::random_sym_quadtensor(2, 2, rng);
  auto lfield = [&](const Point& x) {
    QuadTensor t = L0;
    t *= 1.0 + 0.25 * x[0];
    return t;
  };
  Domain dom = Domain::unit_box(2, 6);
  SecondVariationForm form = SecondVariationForm::assemble(dom, 2, lfield, 2);
  CHECK(form.max_asymmetry() <= 1e-12 * (1.0 + form.stiffness().norm()));

  for (int trial = 0; trial < 50; ++trial) {
    DiscreteField phi = oracles::random_field(dom, 2, rng, 1.0, true);
    Eigen::VectorXd u = form.restrict_field(phi);
    double qa = u.dot(form.stiffness() * u);
    double qb = u.dot(form.normalizer() * u);
    CHECK(std::abs(qa - form.direct_energy(phi)) <= 1e-10 * (1.0 + std::abs(qa)));
    CHECK(std::abs(qb - form.direct_normalizer(phi)) <= 1e-10 * (1.0 + qb));
    // Restriction and extension are inverse on the free nodes.
    DiscreteField back = form.extend(u);
    CHECK((form.restrict_field(back) - u).norm() == 0.0);
  }
}

TEST_CASE("probe geometries carve out balls") {
  ProbeGeometry ball = ProbeGeometry::unit_ball(2, 16);
  CHECK(std::abs(ball.active_volume() - M_PI) < 0.05 * M_PI);
  // Free nodes touch active cells only, so probe fields vanish outside the ball.
  const Domain& box = ball.box;
  for (Index p = 0; p < box.num_nodes(); ++p) {
    if (!ball.node_free[p]) continue;
    const auto mp = box.node_multi(p);
    for (int corner = 0; corner < 4; ++corner) {
      std::array<int, 3> mc = {mp[0] - ((corner & 1) ? 0 : 1), mp[1] - ((corner & 2) ? 0 : 1), 0};
      if (mc[0] < 0 || mc[1] < 0 || mc[0] >= box.cells(0) || mc[1] >= box.cells(1)) {
        FAIL("free node on the bounding box edge");
      } else {
        CHECK(ball.cell_active[box.cell_index(mc)] == 1);
      }
    }
  }

  ProbeGeometry half = ProbeGeometry::half_ball(2, 16, 1, 1);
  CHECK(std::abs(half.active_volume() - M_PI / 2.0) < 0.05 * M_PI);
  CHECK(half.kind == "half-ball");
  CHECK_THROWS_AS(ProbeGeometry::unit_ball(2, 3), ResolutionTooCoarse);
}

TEST_CASE("quadratic probes score exactly one") {
  ReducedLagrangian R = reduce_constant(make_quadratic(2, 2, 1.0), Matrix::Zero(2, 2));
  Point x0 = Point::Zero();
  x0[0] = 0.5;
  x0[1] = 0.5;
  ProbeBudget budget;
  budget.multistarts = 4;
  QCProbeResult p = qc_interior_probe(R, x0, budget, 7);
  CHECK(std::abs(p.best_value - 1.0) < 1e-9);
  CHECK(!p.violation);
  for (double v : p.restart_values) CHECK(p.best_value <= v + 1e-15);

  ReducedLagrangian Rneg = reduce_constant(make_quadratic(2, 2, -1.0), Matrix::Zero(2, 2));
  QCProbeResult pn = qc_interior_probe(Rneg, x0, budget, 7);
  CHECK(std::abs(pn.best_value - (-1.0)) < 1e-9);
  CHECK(pn.violation);

  QCProbeResult pb = qc_boundary_probe(R, x0, 1, -1, budget, 7);
  CHECK(std::abs(pb.best_value - 1.0) < 1e-9);
  QCProbeResult pbn = qc_boundary_probe(Rneg, x0, 1, -1, budget, 7);
  CHECK(std::abs(pbn.best_value - (-1.0)) < 1e-9);
  CHECK(pbn.violation);
}

TEST_CASE("null-lagrangian probes cannot go negative") {
  ReducedLagrangian R = reduce_constant(make_det2(), Matrix::Identity(2, 2));
  ProbeGeometry geom = ProbeGeometry::unit_ball(2, 12);
  Rng rng(71);
  Point x0 = Point::Zero();
  x0[0] = 0.5;
  x0[1] = 0.5;
  for (int trial = 0; trial < 30; ++trial) {
    DiscreteField phi(geom.box, 2);
    for (Index p = 0; p < geom.box.num_nodes(); ++p)
      if (geom.node_free[p])
        for (int i = 0; i < 2; ++i) phi.value(p, i) = rng.sym();
    ProbeObjective o = probe_objective(R, x0, geom, phi, 2);
    CHECK(std::abs(o.numerator) <= 1e-12 * (1.0 + o.denominator));
    CHECK(o.value >= -1e-12);
  }
}

TEST_CASE("the half ball sees directions the full ball cannot") {
  Eigen::VectorXd w(4);
  w << 1.0, 1.0, 1.0, -0.5;
  QuadTensor L = QuadTensor::diagonal(2, 2, w);
  ReducedLagrangian R = reduce_constant(make_quadratic_form(2, 2, L), Matrix::Zero(2, 2));
  Point x0 = Point::Zero();
  x0[0] = 0.5;
  x0[1] = 0.5;
  ProbeBudget budget;
  budget.grid_res = 12;

  QCProbeResult ball = qc_interior_probe(R, x0, budget, 3);
  QCProbeResult half = qc_boundary_probe(R, x0, 1, 1, budget, 3);
  CHECK(half.best_value < ball.best_value);

  // The probe objective is half the pencil quotient for a pure quadratic
  // integrand, so the dense minimum doubles as an oracle for the search.
  auto lf = [&](const Point&) { return L; };
  SecondVariationForm fb =
      SecondVariationForm::assemble(ProbeGeometry::unit_ball(2, budget.grid_res), 2, lf, 2);
  SecondVariationForm fh = SecondVariationForm::assemble(
      ProbeGeometry::half_ball(2, budget.grid_res, 1, 1), 2, lf, 2);
  CHECK(std::abs(ball.best_value - 0.5 * oracles::dense_min_rayleigh(fb)) < 1e-6);
  CHECK(std::abs(half.best_value - 0.5 * oracles::dense_min_rayleigh(fh)) < 1e-6);
}

TEST_CASE("probe searches are deterministic and scale invariant") {
  ReducedLagrangian R = reduce_constant(make_quadratic(2, 2, 1.0), Matrix::Zero(2, 2));
  Point x0 = Point::Zero();
  x0[0] = 0.5;
  x0[1] = 0.5;
  ProbeBudget budget;
  budget.multistarts = 3;
  budget.grid_res = 8;
  QCProbeResult a = qc_interior_probe(R, x0, budget, 99);
  QCProbeResult b = qc_interior_probe(R, x0, budget, 99);
  CHECK(a.best_value == b.best_value);
  REQUIRE(a.restart_values.size() == b.restart_values.size());
  for (std::size_t i = 0; i < a.restart_values.size(); ++i)
    CHECK(a.restart_values[i] == b.restart_values[i]);

  // Rayleigh-style objectives ignore the field's amplitude.
  ProbeGeometry geom = ProbeGeometry::unit_ball(2, 8);
  Rng rng(5);
  DiscreteField phi(geom.box, 2);
  for (Index p = 0; p < geom.box.num_nodes(); ++p)
    if (geom.node_free[p])
      for (int i = 0; i < 2; ++i) phi.value(p, i) = rng.sym();
  double v1 = probe_objective(R, x0, geom, phi, 2).value;
  double v2 = probe_objective(R, x0, geom, phi.scaled(2.0), 2).value;
  CHECK(v1 == doctest::Approx(v2).epsilon(1e-12));

  DiscreteField zero(geom.box, 2);
  CHECK_THROWS_AS(probe_objective(R, x0, geom, zero, 2), ZeroVariation);
}

TEST_CASE("certificates walk the gate order") {
  Domain dom = Domain::unit_box(2, 8);
  Matrix A(2, 2);
  A << 1.0, 0.0, 0.5, 0.0;
  DiscreteField y = DiscreteField::from_function(
      dom, 2, [&](const Point& x) { return Eigen::VectorXd(A * x.head(2)); });

  CertificateOptions opts;
  opts.budget.multistarts = 3;
  opts.budget.grid_res = 8;

  Lagrangian W = make_quadratic(2, 2, 1.0);
  CertificateReport rep = sufficiency_certificate(W, y, opts);
  CHECK(rep.el_pass);
  CHECK(rep.verdict == "sufficient-candidate");
  CHECK(rep.beta_candidate >= 0.99);

  // A negative eigendirection flips the verdict through the second variation.
  Eigen::VectorXd w(4);
  w << 1.0, 1.0, 1.0, -1.0;
  Lagrangian Wneg = make_quadratic_form(2, 2, QuadTensor::diagonal(2, 2, w));
  DiscreteField y0(dom, 2);
  CertificateReport repn = sufficiency_certificate(Wneg, y0, opts);
  CHECK(repn.verdict == "violated");
  CHECK(repn.reason == "second variation attains negative values");
  auto lf = [&](const Point&) { return QuadTensor::diagonal(2, 2, w); };
  SecondVariationForm form = SecondVariationForm::assemble(dom, 2, lf, 2);
  CHECK(oracles::dense_min_rayleigh(form) < -1e-3);

  // A non-extremal base state never reaches the probes.
  Lagrangian Wq = make_quadratic(1, 2, 1.0);
  DiscreteField ybad = DiscreteField::from_function(dom, 1, [](const Point& x) {
    Eigen::VectorXd v(1);
    v[0] = x[0] * x[0];
    return v;
  });
  CertificateReport repi = sufficiency_certificate(Wq, ybad, opts);
  CHECK(repi.verdict == "inconclusive");
  CHECK(repi.reason == "EL residual above tolerance");
}
