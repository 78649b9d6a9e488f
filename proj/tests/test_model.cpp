#include "doctest.h"

#include <random>

#include "parareach/model.hpp"
#include "support.hpp"

using namespace parareach;
using parareach::test::ex1_system;
using parareach::test::scalar_seed;
using parareach::test::sec5_system;

TEST_CASE("make_system accepts the example systems") {
  const auto s1 = ex1_system();
  CHECK(s1.n() == 1);
  CHECK(s1.m() == 1);
  CHECK(s1.p() == 1);
  CHECK(s1.Mw()(0, 0) == -2);
  CHECK(s1.Mw_inv()(0, 0) == doctest::Approx(-0.5));

  const auto s5 = sec5_system();
  CHECK(s5.n() == 2);
  CHECK(s5.m() == 2);
  CHECK(s5.p() == 1);
  CHECK(s5.Mx().isIdentity());
  CHECK(s5.Mu()(0, 0) == 1);
  CHECK(s5.Mw().isApprox(-2 * Eigen::MatrixXd::Identity(2, 2)));
  CHECK(s5.Mxw().isZero());
  CHECK(s5.Muw().isZero());
}

TEST_CASE("make_system rejects invalid inputs") {
  Eigen::MatrixXd A(1, 1), B(1, 1), Bu(1, 1);
  A << -1;
  B << 1;
  Bu << 0;
  const auto u = InputSignal<double>::zero(1);

  SUBCASE("positive M_w") {
    const Eigen::MatrixXd M = Eigen::Vector3d(1, 1, 1).asDiagonal();
    CHECK_THROWS_AS(make_system(A, B, Bu, M, u), NotNegativeDefinite);
  }
  SUBCASE("semidefinite M_w") {
    const Eigen::MatrixXd M = Eigen::Vector3d(1, 1, 0).asDiagonal();
    CHECK_THROWS_AS(make_system(A, B, Bu, M, u), NotNegativeDefinite);
  }
  SUBCASE("wrong M size") {
    const Eigen::MatrixXd M = Eigen::Vector2d(1, -2).asDiagonal();
    CHECK_THROWS_AS(make_system(A, B, Bu, M, u), DimensionMismatch);
  }
  SUBCASE("B with the wrong row count") {
    const Eigen::MatrixXd B2 = Eigen::MatrixXd::Ones(2, 1);
    const Eigen::MatrixXd M = Eigen::Vector3d(1, 1, -2).asDiagonal();
    CHECK_THROWS_AS(make_system(A, B2, Bu, M, u), DimensionMismatch);
  }
  SUBCASE("input dimension differs from B_u") {
    const Eigen::MatrixXd M = Eigen::Vector3d(1, 1, -2).asDiagonal();
    CHECK_THROWS_AS(make_system(A, B, Bu, M, InputSignal<double>::zero(2)), DimensionMismatch);
  }
  SUBCASE("asymmetric M") {
    Eigen::MatrixXd M = Eigen::Vector3d(1, 1, -2).asDiagonal();
    M(0, 1) = 0.5;
    CHECK_THROWS_AS(make_system(A, B, Bu, M, u), NotSymmetric);
  }
  SUBCASE("non-finite entries") {
    Eigen::MatrixXd M = Eigen::Vector3d(1, 1, -2).asDiagonal();
    M(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(make_system(A, B, Bu, M, u), ConfigError);
  }
}

TEST_CASE("make_system symmetrizes rounding noise and reads back its blocks") {
  std::mt19937_64 rng(7);
  const auto sys = test::random_system(rng, 3, 2, 2);
  Eigen::MatrixXd M = sys.M();
  CHECK(M.isApprox(M.transpose(), 0));
  M(0, 1) += 1e-13;
  const auto again = make_system<double>(sys.A(), sys.B(), sys.Bu(), M, sys.u());
  const Eigen::MatrixXd expected = (M + M.transpose()) / 2;
  CHECK(again.M() == expected);
  CHECK(again.Mxu() == expected.block(0, 3, 3, 2));
  CHECK(again.Muw() == expected.block(3, 5, 2, 2));
}

TEST_CASE("empty B_u means no input channel") {
  Eigen::MatrixXd A(1, 1), B(1, 1);
  A << -1;
  B << 1;
  const Eigen::MatrixXd M = Eigen::Vector2d(1, -2).asDiagonal();
  const auto sys = make_system<double>(A, B, Eigen::MatrixXd(), M, InputSignal<double>::zero(0));
  CHECK(sys.p() == 0);
  CHECK(sys.Bu().rows() == 1);
}

TEST_CASE("value_function examples") {
  const auto I2 = Eigen::MatrixXd::Identity(2, 2);
  const auto P = make_paraboloid<double>(I2, Eigen::VectorXd::Zero(2), 0.0);
  CHECK(value_function(P, AugmentedState<double>{Eigen::VectorXd::Zero(2), 0.0}) == 0);

  const auto Q = scalar_seed(1, 0, 0.015);
  CHECK(value_function(Q, AugmentedState<double>{Eigen::VectorXd::Zero(1), -0.015}) ==
        doctest::Approx(0.0).epsilon(1e-15));

  const auto R = scalar_seed(2, 1, 0);
  CHECK(value_function(R, AugmentedState<double>{Eigen::VectorXd::Ones(1), 3.0}) == 3);

  CHECK_THROWS_AS(value_function(P, AugmentedState<double>{Eigen::VectorXd::Zero(3), 0.0}),
                  DimensionMismatch);
}

TEST_CASE("value_function is affine in x_q with unit slope") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    Eigen::MatrixXd E = Eigen::MatrixXd::Random(3, 3);
    E = (E + E.transpose()).eval();
    const auto P = make_paraboloid<double>(E, Eigen::VectorXd::Random(3), N(rng));
    const Eigen::VectorXd x = Eigen::VectorXd::Random(3);
    const double xq = N(rng), d = N(rng);
    const double h0 = value_function(P, AugmentedState<double>{x, xq});
    const double h1 = value_function(P, AugmentedState<double>{x, xq + d});
    CHECK(h1 - h0 == doctest::Approx(d).epsilon(1e-12));
  }
}

TEST_CASE("make_paraboloid validates its parameters") {
  Eigen::MatrixXd E(2, 2);
  E << 1, 0.3, 0.2, 1;
  CHECK_THROWS_AS(make_paraboloid<double>(E, Eigen::VectorXd::Zero(2), 0.0), NotSymmetric);
  CHECK_THROWS_AS(make_paraboloid<double>(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(3), 0.0),
                  DimensionMismatch);
  // Indefinite E is allowed.
  Eigen::MatrixXd F(2, 2);
  F << 1, 0, 0, -1;
  CHECK_NOTHROW(make_paraboloid<double>(F, Eigen::VectorXd::Zero(2), 0.0));
}

TEST_CASE("scale_paraboloid") {
  const auto P = scalar_seed(1, 0, 0.015);
  const auto same = scale_paraboloid(P, 1.0);
  CHECK(same.E == P.E);
  CHECK(same.f == P.f);
  CHECK(same.g == P.g);

  const auto twice = scale_paraboloid(P, 2.0);
  CHECK(twice.E(0, 0) == 2);
  CHECK(twice.f(0) == 0);
  CHECK(twice.g == doctest::Approx(0.03));

  CHECK_THROWS_AS(scale_paraboloid(P, 0.0), NonPositiveScale);
  CHECK_THROWS_AS(scale_paraboloid(P, -1.0), NonPositiveScale);
}

TEST_CASE("scaling nests the seed inside X+") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-3.0, 3.0);
  Eigen::MatrixXd E(2, 2);
  E << 1.5, 0.4, 0.4, -0.7;  // indefinite on purpose
  const auto P = make_paraboloid<double>(E, Eigen::Vector2d(0.3, -0.2), -1.0);
  int tested = 0;
  for (int k = 0; k < 20000; ++k) {
    const AugmentedState<double> X{Eigen::Vector2d(U(rng), U(rng)), U(rng) + 3.0};
    if (value_function(P, X) > 0) continue;
    ++tested;
    for (double gamma : {1.0, 1.6, 2.2, 10.0, 1e4})
      CHECK(value_function(scale_paraboloid(P, gamma), X) <= 0);
  }
  CHECK(tested > 100);
}

TEST_CASE("sampled input signal") {
  std::vector<double> t{0.0, 1.0, 2.0};
  std::vector<Eigen::VectorXd> v{Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, 1.0),
                                 Eigen::VectorXd::Constant(1, 4.0)};
  const auto u = InputSignal<double>::sampled(t, v);
  CHECK(u(0.0)(0) == 0);
  CHECK(u(1.0)(0) == 1);
  CHECK(u(2.0)(0) == 4);
  CHECK(u(-1.0)(0) == 0);
  CHECK(u(5.0)(0) == 4);
  // C^1: one-sided difference quotients agree at the interior node.
  const double h = 1e-6;
  const double left = (u(1.0)(0) - u(1.0 - h)(0)) / h;
  const double right = (u(1.0 + h)(0) - u(1.0)(0)) / h;
  CHECK(left == doctest::Approx(right).epsilon(1e-4));

  CHECK_THROWS_AS(InputSignal<double>::sampled({0.0, 0.0}, {v[0], v[1]}), ConfigError);
  CHECK_THROWS_AS(InputSignal<double>::sampled({0.0}, {v[0], v[1]}), DimensionMismatch);
  const auto z = InputSignal<double>::zero(3);
  CHECK(z.is_zero());
  CHECK(z(1.5).isZero());
  CHECK(z(1.5).size() == 3);
}

TEST_CASE("energy rate and drift") {
  const auto sys = sec5_system();
  const Eigen::Vector2d x(1, 2), w(0.5, -1);
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(1, 3.0);
  CHECK(sys.energy_rate(x, u, w) == doctest::Approx(5 + 9 - 2 * 1.25));
  CHECK(sys.drift(x, u, w).isApprox(Eigen::Vector2d(-0.5, -3)));
}
