#pragma once

// Shared fixtures and analytic references for the test suites.

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "parareach/model.hpp"

namespace parareach::test {

inline const double sqrt2 = std::sqrt(2.0);
inline const double E_minus = 2 - sqrt2;
inline const double E_plus = 2 + sqrt2;

/// Scalar example: x' = -x + w, M = diag(1, 1, -2) in (x, u, w) order.
inline IqcSystem<double> ex1_system() {
  Eigen::MatrixXd A(1, 1), B(1, 1), Bu(1, 1);
  A << -1;
  B << 1;
  Bu << 0;
  const Eigen::MatrixXd M = Eigen::Vector3d(1, 1, -2).asDiagonal();
  return make_system(A, B, Bu, M, InputSignal<double>::zero(1));
}

/// The 2-D system of the numerical section: A = -I, B = I, M = diag(I, 1, -2I).
inline IqcSystem<double> sec5_system() {
  const Eigen::MatrixXd A = -Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd B = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd Bu = Eigen::MatrixXd::Zero(2, 1);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(5, 5);
  M.diagonal() << 1, 1, 1, -2, -2;
  return make_system(A, B, Bu, M, InputSignal<double>::zero(1));
}

inline Paraboloid<double> scalar_seed(double E0, double f0, double g0) {
  return make_paraboloid<double>(Eigen::MatrixXd::Constant(1, 1, E0),
                                 Eigen::VectorXd::Constant(1, f0), g0);
}

/// Random system with every block of M populated and a sampled input, so
/// that cross terms are exercised. M_w is made negative definite.
inline IqcSystem<double> random_system(std::mt19937_64& rng, Eigen::Index n, Eigen::Index m,
                                       Eigen::Index p) {
  std::normal_distribution<double> N(0.0, 1.0);
  auto rnd = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd X(r, c);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = N(rng);
    return X;
  };
  const Eigen::Index d = n + p + m;
  Eigen::MatrixXd M = rnd(d, d);
  M = (M + M.transpose()).eval() / 2;
  const Eigen::MatrixXd W = rnd(m, m);
  M.bottomRightCorner(m, m) = -(W * W.transpose() + Eigen::MatrixXd::Identity(m, m));
  std::vector<double> times{0.0, 0.5, 1.0, 1.5, 2.0};
  std::vector<Eigen::VectorXd> values;
  for (std::size_t k = 0; k < times.size(); ++k) values.push_back(rnd(p, 1));
  return make_system<double>(rnd(n, n), rnd(n, m), rnd(n, p), M,
                             InputSignal<double>::sampled(times, values));
}

/// Closed-form solution of E' = -E^2/2 + 2E - 1 from E(0) = E0.
inline double ex1_riccati_exact(double E0, double t) {
  const double r = (E0 - E_plus) / (E0 - E_minus) * std::exp(-sqrt2 * t);
  return (E_plus - r * E_minus) / (1 - r);
}

/// Blow-up time of the same solution for E0 < E-.
inline double ex1_escape_exact(double E0) {
  return std::log((E0 - E_plus) / (E0 - E_minus)) / sqrt2;
}

}  // namespace parareach::test
