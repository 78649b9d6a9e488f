#pragma once

// Parameter flow of a time-varying paraboloid: the Riccati equation for E,
// the linear equation for f and the quadrature for g, integrated together.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "parareach/dopri.hpp"
#include "parareach/errors.hpp"
#include "parareach/model.hpp"

namespace parareach {

struct IntegratorConfig {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double max_step = 0.1;
  double escape_norm = 1e7;  // ||E||_F beyond this truncates the domain
  double t_end = 1.0;

  void validate() const {
    if (!(rel_tol >= 1e-13) || !(abs_tol >= 1e-13))
      throw ConfigError("integrator tolerances must be >= 1e-13");
    if (!(max_step > 0) || !(escape_norm > 0) || !(t_end > 0))
      throw ConfigError("max_step, escape_norm and t_end must be positive");
  }

  template <typename Scalar>
  StepControl<Scalar> step_control() const {
    StepControl<Scalar> c;
    c.rel_tol = Scalar(rel_tol);
    c.abs_tol = Scalar(abs_tol);
    c.max_step = Scalar(max_step);
    return c;
  }
};

/// Packed upper-triangular (column-major) storage of a symmetric matrix.
inline Eigen::Index packed_size(Eigen::Index n) { return n * (n + 1) / 2; }

template <typename Derived>
auto pack_symmetric(const Eigen::MatrixBase<Derived>& E) {
  using S = typename Derived::Scalar;
  const auto n = E.rows();
  VectorX<S> v(packed_size(n));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i <= j; ++i) v[k++] = E(i, j);
  return v;
}

template <typename Derived>
auto unpack_symmetric(const Eigen::MatrixBase<Derived>& v, Eigen::Index n) {
  using S = typename Derived::Scalar;
  MatrixX<S> E(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i <= j; ++i) {
      E(i, j) = v[k];
      E(j, i) = v[k];
      ++k;
    }
  return E;
}

/// E' = -E A - A^T E - M_x + (B^T E + M_xw^T)^T M_w^{-1} (B^T E + M_xw^T).
template <typename Scalar>
MatrixX<Scalar> riccati_rhs(const Dense<MatrixX<Scalar>>& E, const IqcSystem<Scalar>& sys) {
  if (E.rows() != sys.n() || E.cols() != sys.n())
    throw DimensionMismatch("riccati_rhs: E has wrong size");
  const MatrixX<Scalar> K = sys.B().transpose() * E + sys.Mxw().transpose();
  MatrixX<Scalar> dE = -E * sys.A() - sys.A().transpose() * E - sys.Mx() +
                       K.transpose() * sys.Mw_inv() * K;
  return symmetrized(dE);
}

/// f' = -A^T f + (M_xu + E B_u) u + (E B + M_xw) M_w^{-1} (B^T f - M_uw^T u).
template <typename Scalar>
VectorX<Scalar> f_rhs(const Dense<MatrixX<Scalar>>& E, const Dense<VectorX<Scalar>>& f,
                      const IqcSystem<Scalar>& sys, const Dense<VectorX<Scalar>>& u) {
  if (E.rows() != sys.n() || f.size() != sys.n() || u.size() != sys.p())
    throw DimensionMismatch("f_rhs: dimension mismatch");
  return -sys.A().transpose() * f + (sys.Mxu() + E * sys.Bu()) * u +
         (E * sys.B() + sys.Mxw()) * sys.Mw_inv() *
             (sys.B().transpose() * f - sys.Muw().transpose() * u);
}

/// G such that g' = [f;u]^T G [f;u]. The (u,u) block is
/// M_uw M_w^{-1} M_uw^T - M_u; with that sign the maximal value-function
/// derivative vanishes for every input signal.
template <typename Scalar>
MatrixX<Scalar> g_quadrature_matrix(const IqcSystem<Scalar>& sys) {
  const auto n = sys.n(), p = sys.p();
  const MatrixX<Scalar>& Wi = sys.Mw_inv();
  MatrixX<Scalar> G(n + p, n + p);
  const MatrixX<Scalar> cross = sys.Bu() - sys.B() * Wi * sys.Muw().transpose();
  G.topLeftCorner(n, n) = sys.B() * Wi * sys.B().transpose();
  G.topRightCorner(n, p) = cross;
  G.bottomLeftCorner(p, n) = cross.transpose();
  G.bottomRightCorner(p, p) = sys.Muw() * Wi * sys.Muw().transpose() - sys.Mu();
  return symmetrized(G);
}

template <typename Scalar>
Scalar g_rhs(const MatrixX<Scalar>& G, const VectorX<Scalar>& f,
             const VectorX<Scalar>& u) {
  VectorX<Scalar> fu(f.size() + u.size());
  fu << f, u;
  return fu.dot(G * fu);
}

/// Time derivatives (E', f', g') of a paraboloid under the flow.
template <typename Scalar>
Paraboloid<Scalar> paraboloid_rates(const Paraboloid<Scalar>& P,
                                    const IqcSystem<Scalar>& sys,
                                    const VectorX<Scalar>& u) {
  return {riccati_rhs(P.E, sys), f_rhs(P.E, P.f, sys, u),
          g_rhs(g_quadrature_matrix(sys), P.f, u)};
}

/// Sampled solution of the parameter IVP with cubic Hermite dense output.
/// The grid starts at 0 and, when the Riccati solution escapes, stops
/// strictly before the recorded escape time.
template <typename Scalar>
class TimeVaryingParaboloid {
 public:
  TimeVaryingParaboloid(Eigen::Index n, Scalar gamma, std::vector<Scalar> grid,
                        std::vector<VectorX<Scalar>> states,
                        std::vector<VectorX<Scalar>> derivs,
                        std::optional<Scalar> escape_time)
      : n_(n),
        gamma_(gamma),
        grid_(std::move(grid)),
        states_(std::move(states)),
        derivs_(std::move(derivs)),
        escape_time_(escape_time) {}

  Eigen::Index n() const { return n_; }
  Scalar gamma() const { return gamma_; }
  std::size_t size() const { return grid_.size(); }
  const std::vector<Scalar>& grid() const { return grid_; }
  const std::optional<Scalar>& escape_time() const { return escape_time_; }
  /// Last time at which the paraboloid is available.
  Scalar end_time() const { return grid_.back(); }
  bool defined_at(Scalar t) const { return t >= 0 && t <= end_time(); }

  MatrixX<Scalar> E(std::size_t k) const { return unpack_symmetric(states_[k].head(packed_size(n_)), n_); }
  VectorX<Scalar> f(std::size_t k) const { return states_[k].segment(packed_size(n_), n_); }
  Scalar g(std::size_t k) const { return states_[k][packed_size(n_) + n_]; }
  Paraboloid<Scalar> sample(std::size_t k) const { return unpack(states_[k]); }
  /// Stored derivative (E', f', g') at grid point k.
  Paraboloid<Scalar> rate(std::size_t k) const { return unpack(derivs_[k]); }
  const VectorX<Scalar>& state(std::size_t k) const { return states_[k]; }
  const VectorX<Scalar>& deriv(std::size_t k) const { return derivs_[k]; }

  Paraboloid<Scalar> unpack(const VectorX<Scalar>& y) const {
    const auto np = packed_size(n_);
    return {unpack_symmetric(y.head(np), n_), y.segment(np, n_), y[np + n_]};
  }

  /// Largest Frobenius norm of E over the grid.
  Scalar max_E_norm() const {
    Scalar mx = 0;
    for (std::size_t k = 0; k < size(); ++k) mx = std::max(mx, E(k).norm());
    return mx;
  }

 private:
  Eigen::Index n_;
  Scalar gamma_;
  std::vector<Scalar> grid_;
  std::vector<VectorX<Scalar>> states_;
  std::vector<VectorX<Scalar>> derivs_;
  std::optional<Scalar> escape_time_;
};

/// Integrates (E, f, g) from the seed P0 over [0, cfg.t_end]. When ||E||
/// exceeds cfg.escape_norm the integration stops and the crossing time is
/// bracketed by bisection on the last step size.
template <typename Scalar>
TimeVaryingParaboloid<Scalar> propagate(const Paraboloid<Scalar>& P0,
                                        const IqcSystem<Scalar>& sys,
                                        const IntegratorConfig& cfg,
                                        Scalar gamma = Scalar(1)) {
  cfg.validate();
  const auto n = sys.n();
  if (P0.dim() != n || P0.E.rows() != n || P0.E.cols() != n)
    throw DimensionMismatch("propagate: seed and system dimensions differ");
  const auto np = packed_size(n);
  const MatrixX<Scalar> G = g_quadrature_matrix(sys);

  auto rhs = [&](Scalar t, const VectorX<Scalar>& y) {
    const MatrixX<Scalar> E = unpack_symmetric(y.head(np), n);
    const VectorX<Scalar> f = y.segment(np, n);
    const VectorX<Scalar> u = sys.u()(t);
    VectorX<Scalar> dy(np + n + 1);
    dy.head(np) = pack_symmetric(riccati_rhs(E, sys));
    dy.segment(np, n) = f_rhs(E, f, sys, u);
    dy[np + n] = g_rhs(G, f, u);
    return dy;
  };
  auto E_norm = [&](const VectorX<Scalar>& y) {
    return unpack_symmetric(y.head(np), n).norm();
  };

  VectorX<Scalar> y0(np + n + 1);
  y0 << pack_symmetric(P0.E), P0.f, P0.g;

  std::vector<Scalar> grid{Scalar(0)};
  std::vector<VectorX<Scalar>> states{y0};
  std::vector<VectorX<Scalar>> derivs{rhs(Scalar(0), y0)};
  const Scalar escape_norm = Scalar(cfg.escape_norm);

  if (!(E_norm(y0) <= escape_norm))
    throw ConfigError("propagate: ||E0|| already exceeds escape_norm");

  auto on_step = [&](Scalar, const VectorX<Scalar>&, const VectorX<Scalar>&,
                     Scalar t1, const VectorX<Scalar>& y1,
                     const VectorX<Scalar>& dy1) {
    if (!(E_norm(y1) <= escape_norm)) return StepVerdict::stop;
    grid.push_back(t1);
    states.push_back(y1);
    derivs.push_back(dy1);
    return StepVerdict::accept;
  };

  const auto ctrl = cfg.step_control<Scalar>();
  const auto res = integrate(rhs, Scalar(0), y0, Scalar(cfg.t_end), ctrl, on_step);
  if (!res.stopped) return {n, gamma, grid, states, derivs, std::nullopt};

  // Bracket the crossing of escape_norm inside the stopped step.
  const Scalar t0 = res.t;
  Scalar lo = 0, hi = res.next_step;
  std::optional<RkTrial<Scalar>> last_ok;
  const Scalar width = Scalar(1e-7) * std::max(Scalar(1), t0 + hi);
  while (hi - lo > width) {
    const Scalar mid = Scalar(0.5) * (lo + hi);
    RkTrial<Scalar> trial = dopri_step(rhs, t0, res.y, res.dy, mid, ctrl);
    if (trial.y.allFinite() && E_norm(trial.y) <= escape_norm) {
      lo = mid;
      last_ok = std::move(trial);
    } else {
      hi = mid;
    }
  }
  if (last_ok && lo > 0) {
    grid.push_back(t0 + lo);
    states.push_back(last_ok->y);
    derivs.push_back(last_ok->dy);
  }
  return {n, gamma, grid, states, derivs, t0 + hi};
}

/// Dense-output evaluation of (E, f, g) at t; exact at grid points.
template <typename Scalar>
Paraboloid<Scalar> eval_paraboloid(const TimeVaryingParaboloid<Scalar>& P, Scalar t) {
  const auto& grid = P.grid();
  if (!(t >= 0) || t > P.end_time())
    throw OutOfDomain("time " + std::to_string(static_cast<double>(t)) +
                      " outside the paraboloid's domain [0, " +
                      std::to_string(static_cast<double>(P.end_time())) + "]");
  const auto it = std::lower_bound(grid.begin(), grid.end(), t);
  const auto k = static_cast<std::size_t>(it - grid.begin());
  if (k < grid.size() && grid[k] == t) return P.sample(k);
  return P.unpack(hermite_interpolate(grid[k - 1], P.state(k - 1), P.deriv(k - 1),
                                      grid[k], P.state(k), P.deriv(k), t));
}

}  // namespace parareach
