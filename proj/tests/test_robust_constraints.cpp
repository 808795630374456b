#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sls/robust_constraints.hpp"
#include "support/oracles.hpp"
#include "support/test_games.hpp"

#include <random>

using namespace sls;

TEST_CASE("dual norms of the two noise families") {
  RowVectorXd row(1);
  row << 1.0;
  MatrixXd tap(1, 2);
  tap << 1.0, -2.0;

  SUBCASE("infinity ball uses the l1 dual") {
    const NoiseModel noise = NoiseModel::infinity_ball(MatrixXd::Identity(2, 2));
    CHECK(worst_case_lhs(row, {tap}, noise) == doctest::Approx(3.0));
  }
  SUBCASE("ellipsoid uses the l2 dual") {
    const NoiseModel noise = NoiseModel::energy_ellipsoid(MatrixXd::Identity(2, 2));
    CHECK(worst_case_lhs(row, {tap}, noise) == doctest::Approx(std::sqrt(5.0)));
  }
  SUBCASE("singular ellipsoid is rejected") {
    MatrixXd p = MatrixXd::Zero(2, 2);
    p(0, 0) = 1.0;
    const NoiseModel noise = NoiseModel::energy_ellipsoid(p);
    CHECK_THROWS_AS(worst_case_lhs(row, {tap}, noise), Error);
  }
}

TEST_CASE("infinity-ball worst case equals vertex enumeration") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const int nx = 2 + static_cast<int>(rng() % 5);
    const int n_taps = 1 + static_cast<int>(rng() % 3);
    RowVectorXd row(nx);
    for (int i = 0; i < nx; ++i) row(i) = gauss(rng);
    std::vector<MatrixXd> taps;
    for (int n = 0; n < n_taps; ++n) {
      MatrixXd t(nx, nx);
      for (int i = 0; i < nx; ++i)
        for (int j = 0; j < nx; ++j) t(i, j) = gauss(rng);
      taps.push_back(t);
    }
    // Alternate identity and random invertible shapes.
    MatrixXd p = MatrixXd::Identity(nx, nx);
    if (trial % 2 == 1) {
      MatrixXd r(nx, nx);
      do {
        for (int i = 0; i < nx; ++i)
          for (int j = 0; j < nx; ++j) r(i, j) = gauss(rng);
      } while (std::abs(r.determinant()) < 1e-3);
      p = r;
    }
    const NoiseModel noise = NoiseModel::infinity_ball(p);
    const double lib = worst_case_lhs(row, taps, noise);
    const double oracle = testing::vertex_worst_case(row, taps, p);
    CHECK(lib == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("compile covers the right rows") {
  SUBCASE("unconstrained games compile to nothing") {
    std::mt19937_64 rng(5);
    testing::RandomGameOptions opts;
    const GameSpec spec = testing::random_game(rng, opts);
    const CompiledConstraints cc = compile(spec, 0, 6);
    CHECK(cc.empty());
  }
  SUBCASE("chain player sees its own two input rows") {
    const GameSpec spec = build_chain_game(14, {10.0, 40.0, 10.0});
    const CompiledConstraints cc = compile(spec, 0, 10);
    CHECK(cc.rows.size() == 2);
    CHECK(cc.input_row_count() == 2);
    CHECK(cc.state_row_count() == 0);
    CHECK(cc.coupled_row_count() == 0);
    CHECK(cc.rows[0].rhs == 1.0);
  }
  SUBCASE("market game compiles the shared price cap") {
    MarketParams params;
    params.seed = 2;
    const GameSpec spec = build_market_game(params);
    const CompiledConstraints cc = compile(spec, 1, 8);
    CHECK(cc.rows.size() == 2);
    CHECK(cc.coupled_row_count() == 2);
    for (const auto& r : cc.rows) {
      CHECK(r.rhs == 1.0);
      CHECK(r.rows.size() == 4);
    }
  }
  SUBCASE("unbounded noise with bounded rows is rejected") {
    GameSpec spec = build_chain_game(14, {1.0, 1.0, 1.0});
    MatrixXd p = MatrixXd::Identity(14, 14);
    p(0, 0) = 0.0;  // rank deficient: noise unbounded along e_1
    spec.noise = NoiseModel::infinity_ball(p);
    CHECK_THROWS_AS(compile(spec, 0, 5), Error);
  }
}

TEST_CASE("feasibility slack report") {
  const GameSpec spec = build_chain_game(14, {10.0, 40.0, 10.0});
  const int horizon = 6;
  const CompiledConstraints cc = compile(spec, 0, horizon);

  std::vector<FirKernel> zeros;
  for (int p = 0; p < 3; ++p) zeros.push_back(FirKernel::zero(2, 14, horizon - 1));
  const StrategyProfile zero_prof = StrategyProfile::from_phi_u(spec, zeros);
  const SlackReport at_zero = check_feasible_point(cc, zero_prof);
  for (double s : at_zero.slack) CHECK(s == doctest::Approx(-1.0));
  CHECK(at_zero.feasible());

  // A large tap on the constrained functional goes infeasible.
  std::vector<FirKernel> big = zeros;
  big[0].tap(1)(0, 0) = 30.0;
  big[0].tap(1)(1, 0) = 30.0;
  const SlackReport at_big =
      check_feasible_point(cc, StrategyProfile::from_phi_u(spec, big));
  CHECK(at_big.max_slack() > 0.0);
  CHECK(!at_big.feasible());
}

TEST_CASE("worst case bounds every sampled trajectory value") {
  // Soundness sampling for both noise families: no sampled convolution value
  // may exceed the robust left-hand side.
  std::mt19937_64 rng(99);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const bool ellipsoid : {false, true}) {
    const int nx = 3, n_taps = 3;
    RowVectorXd row(nx);
    for (int i = 0; i < nx; ++i) row(i) = gauss(rng);
    std::vector<MatrixXd> taps;
    for (int n = 0; n < n_taps; ++n) {
      MatrixXd t(nx, nx);
      for (int i = 0; i < nx; ++i)
        for (int j = 0; j < nx; ++j) t(i, j) = gauss(rng);
      taps.push_back(t);
    }
    const NoiseModel noise = ellipsoid
                                 ? NoiseModel::energy_ellipsoid(MatrixXd::Identity(nx, nx))
                                 : NoiseModel::infinity_ball(MatrixXd::Identity(nx, nx));
    const double bound = worst_case_lhs(row, taps, noise);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int draw = 0; draw < 2000; ++draw) {
      double v = 0.0;
      for (const auto& tap : taps) {
        VectorXd w(nx);
        for (int i = 0; i < nx; ++i) w(i) = unif(rng);
        if (ellipsoid && w.norm() > 1.0) w /= w.norm();
        v += row * tap * w;
      }
      CHECK(v <= bound + 1e-12);
    }
  }
}
