#pragma once

// Core domain types: the IQC-constrained LTI plant, paraboloids in the
// augmented (x, x_q) space and their value function.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "parareach/errors.hpp"

namespace parareach {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
/// Non-deducing parameter type: the scalar comes from the other arguments, so
/// Eigen expressions (Identity, Zero, ...) can be passed directly.
template <typename T>
using Dense = std::type_identity_t<T>;

struct ModelTolerances {
  double sym_tol = 1e-10;    // relative: ||M - M^T|| <= sym_tol * ||M||
  double pd_margin = 1e-12;  // eigenvalues of M_w must be <= -pd_margin
};

template <typename Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived>& M, double rel_tol) {
  using std::abs;
  if (M.rows() != M.cols()) return false;
  const auto scale = M.norm();
  return (M - M.transpose()).norm() <= rel_tol * scale;
}

template <typename Derived>
auto symmetrized(const Eigen::MatrixBase<Derived>& M) {
  using S = typename Derived::Scalar;
  return MatrixX<S>(S(0.5) * (M + M.transpose()));
}

/// Input signal u(t). Either identically zero, or a C^1 piecewise-cubic
/// Hermite interpolant of samples with finite-difference slopes. Outside the
/// sampled range the end values are held constant.
template <typename Scalar>
class InputSignal {
 public:
  static InputSignal zero(Eigen::Index dim) {
    InputSignal s;
    s.dim_ = dim;
    return s;
  }

  static InputSignal sampled(std::vector<Scalar> times,
                             std::vector<VectorX<Scalar>> values) {
    if (times.empty() || times.size() != values.size())
      throw DimensionMismatch("input signal: times and values differ in length");
    for (std::size_t k = 1; k < times.size(); ++k)
      if (!(times[k] > times[k - 1]))
        throw ConfigError("input signal: times must be strictly increasing");
    const auto dim = values.front().size();
    for (const auto& v : values)
      if (v.size() != dim)
        throw DimensionMismatch("input signal: inconsistent value dimension");

    InputSignal s;
    s.dim_ = dim;
    s.times_ = std::move(times);
    s.values_ = std::move(values);
    const std::size_t N = s.times_.size();
    s.slopes_.assign(N, VectorX<Scalar>::Zero(dim));
    if (N > 1) {
      for (std::size_t k = 0; k < N; ++k) {
        const std::size_t lo = k == 0 ? 0 : k - 1;
        const std::size_t hi = k + 1 == N ? N - 1 : k + 1;
        s.slopes_[k] =
            (s.values_[hi] - s.values_[lo]) / (s.times_[hi] - s.times_[lo]);
      }
    }
    return s;
  }

  Eigen::Index dim() const { return dim_; }
  bool is_zero() const { return times_.empty(); }
  const std::vector<Scalar>& times() const { return times_; }
  const std::vector<VectorX<Scalar>>& values() const { return values_; }

  VectorX<Scalar> operator()(Scalar t) const {
    if (is_zero()) return VectorX<Scalar>::Zero(dim_);
    if (t <= times_.front()) return values_.front();
    if (t >= times_.back()) return values_.back();
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const auto k = static_cast<std::size_t>(it - times_.begin()) - 1;
    const Scalar h = times_[k + 1] - times_[k];
    const Scalar s = (t - times_[k]) / h;
    const Scalar s2 = s * s, s3 = s2 * s;
    const Scalar h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const Scalar h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    return h00 * values_[k] + h10 * h * slopes_[k] + h01 * values_[k + 1] +
           h11 * h * slopes_[k + 1];
  }

 private:
  Eigen::Index dim_ = 0;
  std::vector<Scalar> times_;
  std::vector<VectorX<Scalar>> values_;
  std::vector<VectorX<Scalar>> slopes_;
};

template <typename Scalar>
class IqcSystem;

/// Validates dimensions, symmetrizes M and checks M_w < 0.
template <typename Scalar>
IqcSystem<Scalar> make_system(MatrixX<Scalar> A, MatrixX<Scalar> B,
                              MatrixX<Scalar> Bu, const MatrixX<Scalar>& M,
                              InputSignal<Scalar> u,
                              const ModelTolerances& tol = {});

/// LTI plant x' = A x + B w + B_u u under the energy budget
/// x_q(t) = x_q0 + int [x;u;w]^T M [x;u;w] >= 0.
///
/// M is stored by blocks in (x, u, w) order. Construct through make_system().
template <typename Scalar>
class IqcSystem {
 public:
  Eigen::Index n() const { return A_.rows(); }
  Eigen::Index m() const { return B_.cols(); }
  Eigen::Index p() const { return Bu_.cols(); }

  const MatrixX<Scalar>& A() const { return A_; }
  const MatrixX<Scalar>& B() const { return B_; }
  const MatrixX<Scalar>& Bu() const { return Bu_; }
  const MatrixX<Scalar>& Mx() const { return Mx_; }
  const MatrixX<Scalar>& Mxu() const { return Mxu_; }
  const MatrixX<Scalar>& Mxw() const { return Mxw_; }
  const MatrixX<Scalar>& Mu() const { return Mu_; }
  const MatrixX<Scalar>& Muw() const { return Muw_; }
  const MatrixX<Scalar>& Mw() const { return Mw_; }
  const MatrixX<Scalar>& Mw_inv() const { return Mw_inv_; }
  const InputSignal<Scalar>& u() const { return u_; }

  /// Reassembled (n+p+m) square matrix.
  MatrixX<Scalar> M() const {
    const auto n = this->n(), m = this->m(), p = this->p();
    MatrixX<Scalar> M(n + p + m, n + p + m);
    M << Mx_, Mxu_, Mxw_, Mxu_.transpose(), Mu_, Muw_, Mxw_.transpose(),
        Muw_.transpose(), Mw_;
    return M;
  }

  /// Energy rate [x;u;w]^T M [x;u;w].
  template <typename DX, typename DU, typename DW>
  Scalar energy_rate(const Eigen::MatrixBase<DX>& x,
                     const Eigen::MatrixBase<DU>& u,
                     const Eigen::MatrixBase<DW>& w) const {
    return x.dot(Mx_ * x) + 2 * x.dot(Mxu_ * u) + 2 * x.dot(Mxw_ * w) +
           u.dot(Mu_ * u) + 2 * u.dot(Muw_ * w) + w.dot(Mw_ * w);
  }

  template <typename DX, typename DU, typename DW>
  VectorX<Scalar> drift(const Eigen::MatrixBase<DX>& x,
                        const Eigen::MatrixBase<DU>& u,
                        const Eigen::MatrixBase<DW>& w) const {
    return A_ * x + B_ * w + Bu_ * u;
  }

 private:
  template <typename S>
  friend IqcSystem<S> make_system(MatrixX<S>, MatrixX<S>, MatrixX<S>,
                                  const MatrixX<S>&, InputSignal<S>,
                                  const ModelTolerances&);

  MatrixX<Scalar> A_, B_, Bu_;
  MatrixX<Scalar> Mx_, Mxu_, Mxw_, Mu_, Muw_, Mw_;
  MatrixX<Scalar> Mw_inv_;
  InputSignal<Scalar> u_;
};

template <typename Scalar>
IqcSystem<Scalar> make_system(MatrixX<Scalar> A, MatrixX<Scalar> B,
                              MatrixX<Scalar> Bu, const MatrixX<Scalar>& M,
                              InputSignal<Scalar> u,
                              const ModelTolerances& tol) {
  const auto n = A.rows();
  if (n == 0 || A.cols() != n)
    throw DimensionMismatch("A must be square and non-empty");
  if (B.rows() != n)
    throw DimensionMismatch("B must have as many rows as A");
  if (Bu.rows() != n && !(Bu.size() == 0))
    throw DimensionMismatch("B_u must have as many rows as A");
  if (Bu.size() == 0) Bu.resize(n, 0);
  const auto m = B.cols();
  const auto p = Bu.cols();
  if (m == 0) throw DimensionMismatch("the disturbance dimension m must be >= 1");
  if (M.rows() != n + p + m || M.cols() != n + p + m)
    throw DimensionMismatch("M must be square of size n+p+m = " +
                            std::to_string(n + p + m));
  if (u.dim() != p)
    throw DimensionMismatch("input signal dimension differs from B_u columns");
  if (!A.allFinite() || !B.allFinite() || !Bu.allFinite() || !M.allFinite())
    throw ConfigError("system matrices must be finite");
  if (!is_symmetric(M, tol.sym_tol))
    throw NotSymmetric("M is not symmetric within tolerance");

  const MatrixX<Scalar> Ms = symmetrized(M);
  IqcSystem<Scalar> sys;
  sys.A_ = std::move(A);
  sys.B_ = std::move(B);
  sys.Bu_ = std::move(Bu);
  sys.Mx_ = Ms.block(0, 0, n, n);
  sys.Mxu_ = Ms.block(0, n, n, p);
  sys.Mxw_ = Ms.block(0, n + p, n, m);
  sys.Mu_ = Ms.block(n, n, p, p);
  sys.Muw_ = Ms.block(n, n + p, p, m);
  sys.Mw_ = Ms.block(n + p, n + p, m, m);
  sys.u_ = std::move(u);

  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(sys.Mw_,
                                                     Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success || eig.eigenvalues().maxCoeff() > -tol.pd_margin)
    throw NotNegativeDefinite("M_w is not negative definite");

  Eigen::LLT<MatrixX<Scalar>> llt(-sys.Mw_);
  if (llt.info() != Eigen::Success) throw SingularMw("cannot factor M_w");
  sys.Mw_inv_ = -llt.solve(MatrixX<Scalar>::Identity(m, m));
  sys.Mw_inv_ = symmetrized(sys.Mw_inv_);
  return sys;
}

/// Value function h(x, x_q) = x^T E x - 2 f^T x + g + x_q; the paraboloid is
/// its zero sublevel set. E may be indefinite.
template <typename Scalar>
struct Paraboloid {
  MatrixX<Scalar> E;
  VectorX<Scalar> f;
  Scalar g = 0;

  Eigen::Index dim() const { return f.size(); }
};

template <typename Scalar>
struct AugmentedState {
  VectorX<Scalar> x;
  Scalar xq = 0;
};

template <typename Scalar>
Paraboloid<Scalar> make_paraboloid(const MatrixX<Scalar>& E,
                                   const VectorX<Scalar>& f, Scalar g,
                                   const ModelTolerances& tol = {}) {
  if (E.rows() != E.cols() || E.rows() != f.size())
    throw DimensionMismatch("paraboloid: E must be square with size of f");
  if (!E.allFinite() || !f.allFinite() || !std::isfinite(static_cast<double>(g)))
    throw ConfigError("paraboloid parameters must be finite");
  if (!is_symmetric(E, tol.sym_tol))
    throw NotSymmetric("paraboloid: E is not symmetric within tolerance");
  return {symmetrized(E), f, g};
}

/// The quadratic-and-linear part x^T E x - 2 f^T x + g (value function
/// without the x_q term).
template <typename Scalar, typename Derived>
Scalar quadratic_part(const Paraboloid<Scalar>& P,
                      const Eigen::MatrixBase<Derived>& x) {
  if (x.size() != P.dim())
    throw DimensionMismatch("paraboloid and state dimensions differ");
  return x.dot(P.E * x) - 2 * P.f.dot(x) + P.g;
}

template <typename Scalar>
Scalar value_function(const Paraboloid<Scalar>& P,
                      const AugmentedState<Scalar>& X) {
  return quadratic_part(P, X.x) + X.xq;
}

template <typename Scalar>
Paraboloid<Scalar> scale_paraboloid(const Paraboloid<Scalar>& P, Scalar gamma) {
  if (!(gamma > 0)) throw NonPositiveScale("scaling factor must be positive");
  return {gamma * P.E, gamma * P.f, gamma * P.g};
}

}  // namespace parareach
