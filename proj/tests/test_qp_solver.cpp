#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sls/qp_solver.hpp"
#include "support/oracles.hpp"

#include <random>

using namespace sls;
using qp::ConicProgram;
using qp::SolveResult;
using qp::SolveStatus;

namespace {

Eigen::SparseMatrix<double> sparse(const MatrixXd& m) {
  return m.sparseView(1.0, 0.0);
}

ConicProgram dense_qp(const MatrixXd& Q, const VectorXd& q, const MatrixXd& F,
                      const VectorXd& f) {
  ConicProgram prog;
  prog.n = static_cast<int>(Q.rows());
  prog.Q = sparse(Q);
  prog.q = q;
  prog.E.resize(0, prog.n);
  prog.e.resize(0);
  prog.F = sparse(F);
  prog.f = f;
  return prog;
}

MatrixXd random_spd(std::mt19937_64& rng, int n, double reg = 0.5) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd r(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) r(i, j) = gauss(rng);
  return r * r.transpose() + reg * MatrixXd::Identity(n, n);
}

}  // namespace

TEST_CASE("scalar bound: min x^2 s.t. x >= 1") {
  MatrixXd Q(1, 1), F(1, 1);
  Q << 2.0;
  F << -1.0;  // -x <= -1
  VectorXd q = VectorXd::Zero(1), f = VectorXd::Constant(1, -1.0);
  const SolveResult res = qp::solve(dense_qp(Q, q, F, f));
  REQUIRE(res.status == SolveStatus::kOptimal);
  CHECK(res.z(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(res.dual_ineq(0) == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("ball projection in closed form") {
  VectorXd c(3);
  c << 3.0, 0.0, 4.0;  // ||c|| = 5
  const double radius = 2.0;
  ConicProgram prog;
  prog.n = 3;
  prog.Q = sparse(2.0 * MatrixXd::Identity(3, 3));
  prog.q = -2.0 * c;
  prog.E.resize(0, 3);
  prog.e.resize(0);
  prog.F.resize(0, 3);
  prog.f.resize(0);
  prog.ball = qp::BallConstraint{{0, 1, 2}, radius};

  const SolveResult res = qp::solve(prog);
  REQUIRE(res.status == SolveStatus::kOptimal);
  const VectorXd expect = radius * c / c.norm();
  CHECK((res.z - expect).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(res.ball_multiplier > 1e-6);  // active

  // Dropping the ball recovers the unconstrained minimizer c.
  ConicProgram no_ball = prog;
  no_ball.ball.reset();
  const SolveResult free = qp::solve(no_ball);
  CHECK((free.z - c).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("inactive ball leaves the solution untouched and its multiplier zero") {
  VectorXd c(2);
  c << 0.5, -0.25;
  ConicProgram prog;
  prog.n = 2;
  prog.Q = sparse(2.0 * MatrixXd::Identity(2, 2));
  prog.q = -2.0 * c;
  prog.E.resize(0, 2);
  prog.e.resize(0);
  prog.F.resize(0, 2);
  prog.f.resize(0);
  prog.ball = qp::BallConstraint{{0, 1}, 5.0};
  const SolveResult res = qp::solve(prog);
  REQUIRE(res.status == SolveStatus::kOptimal);
  CHECK((res.z - c).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(res.ball_multiplier < 1e-9);
}

TEST_CASE("second-order cone with equalities") {
  // min t s.t. ||(x2,x3)|| <= t, x2 = 3, x3 = 4  =>  t = 5.
  ConicProgram prog;
  prog.n = 3;
  prog.Q = sparse(MatrixXd::Zero(3, 3));
  prog.q = VectorXd::Zero(3);
  prog.q(0) = 1.0;
  MatrixXd E(2, 3);
  E << 0, 1, 0, 0, 0, 1;
  prog.E = sparse(E);
  prog.e.resize(2);
  prog.e << 3.0, 4.0;
  prog.F.resize(0, 3);
  prog.f.resize(0);
  qp::SocConstraint soc;
  MatrixXd T(2, 3);
  T << 0, 1, 0, 0, 0, 1;
  soc.T = sparse(T);
  soc.t0 = VectorXd::Zero(2);
  soc.head.resize(3);
  soc.head.coeffRef(0) = 1.0;
  soc.head0 = 0.0;
  prog.socs.push_back(soc);

  const SolveResult res = qp::solve(prog);
  REQUIRE(res.status == SolveStatus::kOptimal);
  CHECK(res.z(0) == doctest::Approx(5.0).epsilon(1e-7));
}

TEST_CASE("random QPs match the active-set oracle") {
  std::mt19937_64 rng(123);
  std::normal_distribution<double> gauss(0.0, 1.0);
  int solved = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 9);
    const int m = 1 + static_cast<int>(rng() % 8);
    const MatrixXd Q = random_spd(rng, n);
    VectorXd q(n);
    for (int i = 0; i < n; ++i) q(i) = gauss(rng);
    MatrixXd F(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) F(i, j) = gauss(rng);
    VectorXd f(m);
    for (int i = 0; i < m; ++i) f(i) = std::abs(gauss(rng)) + 0.1;  // zero feasible

    const auto oracle = testing::active_set_oracle(Q, q, F, f);
    REQUIRE(oracle.has_value());
    const SolveResult res = qp::solve(dense_qp(Q, q, F, f));
    REQUIRE(res.status == SolveStatus::kOptimal);
    const double obj = 0.5 * res.z.dot(Q * res.z) + q.dot(res.z);
    CHECK(obj == doctest::Approx(oracle->objective).epsilon(1e-7));
    CHECK((res.z - oracle->x).cwiseAbs().maxCoeff() < 1e-6);
    ++solved;
  }
  CHECK(solved == 25);
}

TEST_CASE("contradictory equalities are certified infeasible") {
  ConicProgram prog;
  prog.n = 1;
  prog.Q = sparse(2.0 * MatrixXd::Identity(1, 1));
  prog.q = VectorXd::Zero(1);
  MatrixXd E(2, 1);
  E << 1.0, 1.0;
  prog.E = sparse(E);
  prog.e.resize(2);
  prog.e << 1.0, 2.0;
  prog.F.resize(0, 1);
  prog.f.resize(0);
  const SolveResult res = qp::solve(prog);
  CHECK(res.status == SolveStatus::kInfeasible);
}

TEST_CASE("opposing halfspaces are certified infeasible") {
  MatrixXd Q = 2.0 * MatrixXd::Identity(2, 2);
  MatrixXd F(2, 2);
  F << 1, 0, -1, 0;  // x <= -1 and -x <= -1
  VectorXd f(2);
  f << -1.0, -1.0;
  const SolveResult res = qp::solve(dense_qp(Q, VectorXd::Zero(2), F, f));
  CHECK(res.status == SolveStatus::kInfeasible);
}

TEST_CASE("feasibility projection") {
  SUBCASE("feasible references are fixed points") {
    MatrixXd F(1, 2);
    F << 1.0, 1.0;
    VectorXd f = VectorXd::Constant(1, 4.0);
    ConicProgram prog = dense_qp(MatrixXd::Zero(2, 2), VectorXd::Zero(2), F, f);
    VectorXd ref(2);
    ref << 1.0, 0.5;
    const SolveResult res = qp::project_feasible(prog, ref);
    REQUIRE(res.status == SolveStatus::kOptimal);
    CHECK((res.z - ref).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("halfspace projection formula") {
    MatrixXd F(1, 2);
    F << 1.0, 1.0;
    VectorXd f = VectorXd::Constant(1, 1.0);
    ConicProgram prog = dense_qp(MatrixXd::Zero(2, 2), VectorXd::Zero(2), F, f);
    VectorXd ref(2);
    ref << 2.0, 2.0;  // distance to {x+y<=1}: project to (0.5, 0.5) + ...
    const SolveResult res = qp::project_feasible(prog, ref);
    REQUIRE(res.status == SolveStatus::kOptimal);
    const VectorXd expect = ref - F.row(0).transpose() * (F.row(0) * ref - f(0)) /
                                      F.row(0).squaredNorm();
    CHECK((res.z - expect).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("matches a plain solve with identity objective") {
    std::mt19937_64 rng(7);
    const MatrixXd Q = MatrixXd::Identity(3, 3);
    MatrixXd F(2, 3);
    F << 1, 1, 0, 0, -1, 1;
    VectorXd f(2);
    f << 0.5, 0.25;
    VectorXd ref(3);
    ref << 1.0, 2.0, -1.0;
    ConicProgram prog = dense_qp(Q, -ref, F, f);
    const SolveResult direct = qp::solve(prog);
    const SolveResult proj = qp::project_feasible(prog, ref);
    REQUIRE(direct.status == SolveStatus::kOptimal);
    REQUIRE(proj.status == SolveStatus::kOptimal);
    CHECK((direct.z - proj.z).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("solutions are stable across warm starts and locally optimal") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = 6, m = 5;
  const MatrixXd Q = random_spd(rng, n);
  VectorXd q(n);
  for (int i = 0; i < n; ++i) q(i) = gauss(rng);
  MatrixXd F(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) F(i, j) = gauss(rng);
  VectorXd f = VectorXd::Constant(m, 1.0);
  ConicProgram prog = dense_qp(Q, q, F, f);

  qp::Solver solver(prog);
  const SolveResult cold = solver.solve();
  REQUIRE(cold.status == SolveStatus::kOptimal);

  qp::Solver solver2(prog);
  VectorXd z0 = VectorXd::Constant(n, 5.0);
  solver2.warm_start(z0, VectorXd::Zero(solver2.constraint_rows()));
  const SolveResult warm = solver2.solve();
  REQUIRE(warm.status == SolveStatus::kOptimal);
  CHECK((cold.z - warm.z).cwiseAbs().maxCoeff() < 1e-7);

  // Random feasible perturbations of size 1e-4 cannot improve the objective
  // beyond tolerance.
  const double obj = 0.5 * cold.z.dot(Q * cold.z) + q.dot(cold.z);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 50; ++trial) {
    VectorXd d(n);
    for (int i = 0; i < n; ++i) d(i) = gauss(rng);
    d *= 1e-4 / d.norm();
    const VectorXd y = cold.z + d;
    if (((F * y - f).array() > 0.0).any()) continue;
    ++checked;
    const double obj_y = 0.5 * y.dot(Q * y) + q.dot(y);
    CHECK(obj_y >= obj - 1e-8);
  }
  CHECK(checked >= 20);
}

TEST_CASE("linear-term updates reuse the factorization") {
  std::mt19937_64 rng(41);
  const int n = 5;
  const MatrixXd Q = random_spd(rng, n);
  MatrixXd F(3, n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < n; ++j) F(i, j) = gauss(rng);
  ConicProgram prog = dense_qp(Q, VectorXd::Zero(n), F, VectorXd::Constant(3, 1.0));

  qp::Solver solver(prog);
  for (int round = 0; round < 4; ++round) {
    for (int i = 0; i < n; ++i) prog.q(i) = gauss(rng);
    solver.update_vectors(prog);
    const SolveResult res = solver.solve();
    REQUIRE(res.status == SolveStatus::kOptimal);
    const SolveResult fresh = qp::solve(prog);
    CHECK((res.z - fresh.z).cwiseAbs().maxCoeff() < 1e-7);
  }
}
