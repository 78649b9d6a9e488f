#pragma once

// Ellipsoidal parameterization of a seed paraboloid with E0 > 0:
// x^T E0 x - 2 f0^T x + g0 = (x - c)^T E0 (x - c) - kappa, c = E0^{-1} f0.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "parareach/errors.hpp"
#include "parareach/model.hpp"

namespace parareach {

template <typename Scalar>
struct SeedEllipse {
  VectorX<Scalar> center;
  MatrixX<Scalar> inv_sqrt;      // E0^{-1/2}
  MatrixX<Scalar> eigenvectors;  // of E0, columns
  Scalar kappa = 0;              // f0^T E0^{-1} f0 - g0

  Eigen::Index dim() const { return center.size(); }

  /// Point with (x - c)^T E0 (x - c) = rho2 in unit direction z.
  VectorX<Scalar> point(const VectorX<Scalar>& z, Scalar rho2) const {
    return center + inv_sqrt * z * std::sqrt(std::max(rho2, Scalar(0)));
  }
};

template <typename Scalar>
SeedEllipse<Scalar> seed_ellipse(const Paraboloid<Scalar>& P0) {
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(P0.E);
  if (eig.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0))
    throw UnboundedSlab("seed E0 is not positive definite; the seed slab is unbounded");
  SeedEllipse<Scalar> s;
  const auto& V = eig.eigenvectors();
  const VectorX<Scalar> lam = eig.eigenvalues();
  s.eigenvectors = V;
  s.inv_sqrt = V * lam.cwiseSqrt().cwiseInverse().asDiagonal() * V.transpose();
  s.center = V * (lam.cwiseInverse().asDiagonal() * (V.transpose() * P0.f));
  s.kappa = P0.f.dot(s.center) - P0.g;
  return s;
}

/// Deterministic unit directions: +-eigenvectors of the seed first, then an
/// even angular grid (n = 2) or seeded Gaussian directions (n >= 3).
template <typename Scalar>
std::vector<VectorX<Scalar>> unit_directions(const SeedEllipse<Scalar>& ell, int count) {
  const auto n = ell.dim();
  std::vector<VectorX<Scalar>> dirs;
  for (Eigen::Index i = 0; i < n; ++i) {
    dirs.push_back(ell.eigenvectors.col(i));
    dirs.push_back(-ell.eigenvectors.col(i));
  }
  if (n == 1) return dirs;
  if (n == 2) {
    for (int k = 0; k < count; ++k) {
      const Scalar th = 2 * std::numbers::pi_v<Scalar> * Scalar(k) / Scalar(count);
      VectorX<Scalar> z(2);
      z << std::cos(th), std::sin(th);
      dirs.push_back(z);
    }
    return dirs;
  }
  std::mt19937_64 rng(0x5eedu);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int k = 0; k < count; ++k) {
    VectorX<Scalar> z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = Scalar(N(rng));
    dirs.push_back(z.normalized());
  }
  return dirs;
}

}  // namespace parareach
