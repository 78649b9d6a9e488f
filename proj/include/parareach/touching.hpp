#pragma once

// Worst-case disturbance, value-function derivative along the flow and
// trajectories that stay on the surface of a time-varying paraboloid.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "parareach/dopri.hpp"
#include "parareach/errors.hpp"
#include "parareach/model.hpp"
#include "parareach/riccati_flow.hpp"

namespace parareach {

/// Sampled (x, x_q, w) trajectory of the augmented system. h_samples holds
/// the value function of the paraboloid that generated it (diagnostic).
template <typename Scalar>
struct AugmentedTrajectory {
  std::vector<Scalar> grid;
  std::vector<VectorX<Scalar>> x_samples;
  std::vector<Scalar> xq_samples;
  std::vector<VectorX<Scalar>> w_samples;
  std::vector<Scalar> h_samples;

  std::size_t size() const { return grid.size(); }
  AugmentedState<Scalar> state(std::size_t k) const {
    return {x_samples[k], xq_samples[k]};
  }
  Scalar max_abs_h() const {
    Scalar mx = 0;
    for (Scalar h : h_samples) mx = std::max(mx, Scalar(std::abs(h)));
    return mx;
  }
};

/// w* = -M_w^{-1} (B^T (E x - f) + M_xw^T x + M_uw^T u), the unique
/// maximizer of the value-function derivative.
template <typename Scalar>
VectorX<Scalar> optimal_disturbance(const Paraboloid<Scalar>& P,
                                    const Dense<VectorX<Scalar>>& x,
                                    const Dense<VectorX<Scalar>>& u,
                                    const IqcSystem<Scalar>& sys) {
  if (x.size() != sys.n() || P.dim() != sys.n() || u.size() != sys.p())
    throw DimensionMismatch("optimal_disturbance: dimension mismatch");
  return -sys.Mw_inv() * (sys.B().transpose() * (P.E * x - P.f) +
                          sys.Mxw().transpose() * x + sys.Muw().transpose() * u);
}

/// dh/dt along the augmented flow driven by w, by the chain rule over
/// (x, x_q, E, f, g). `rates` holds (E', f', g') at the same instant.
template <typename Scalar>
Scalar value_derivative(const Paraboloid<Scalar>& P, const AugmentedState<Scalar>& X,
                        const VectorX<Scalar>& u, const VectorX<Scalar>& w,
                        const IqcSystem<Scalar>& sys,
                        const Paraboloid<Scalar>& rates) {
  const auto n = sys.n();
  if (X.x.size() != n || P.dim() != n || rates.dim() != n || u.size() != sys.p() ||
      w.size() != sys.m())
    throw DimensionMismatch("value_derivative: dimension mismatch");
  const VectorX<Scalar> dx = sys.drift(X.x, u, w);
  const Scalar dxq = sys.energy_rate(X.x, u, w);
  return X.x.dot(rates.E * X.x) - 2 * rates.f.dot(X.x) + rates.g +
         2 * (P.E * X.x - P.f).dot(dx) + dxq;
}

/// Coefficients of the initial energy rate a*gamma^2 + b*gamma + c along the
/// touching trajectory of gamma*P0 through X (x_q does not enter).
template <typename Scalar>
struct RateQuadratic {
  Scalar a = 0, b = 0, c = 0;
  Scalar operator()(Scalar gamma) const { return (a * gamma + b) * gamma + c; }
};

template <typename Scalar>
RateQuadratic<Scalar> xq_rate_coefficients(const Paraboloid<Scalar>& P0,
                                           const Dense<VectorX<Scalar>>& x,
                                           const IqcSystem<Scalar>& sys) {
  if (x.size() != sys.n() || P0.dim() != sys.n())
    throw DimensionMismatch("xq_rate_coefficients: dimension mismatch");
  const VectorX<Scalar> u = sys.u()(Scalar(0));
  // w*(gamma) = gamma * alpha + beta
  const VectorX<Scalar> alpha = -sys.Mw_inv() * (sys.B().transpose() * (P0.E * x - P0.f));
  const VectorX<Scalar> beta =
      -sys.Mw_inv() * (sys.Mxw().transpose() * x + sys.Muw().transpose() * u);
  const VectorX<Scalar> lin = sys.Mxw().transpose() * x + sys.Muw().transpose() * u;
  const Scalar c0 = x.dot(sys.Mx() * x) + 2 * x.dot(sys.Mxu() * u) + u.dot(sys.Mu() * u);
  RateQuadratic<Scalar> q;
  q.a = alpha.dot(sys.Mw() * alpha);
  q.b = 2 * lin.dot(alpha) + 2 * alpha.dot(sys.Mw() * beta);
  q.c = c0 + 2 * lin.dot(beta) + beta.dot(sys.Mw() * beta);
  return q;
}

/// Initial energy rate x_q'(0) of the touching trajectory of gamma*P0 at X.
template <typename Scalar>
Scalar xq_rate_at_zero(const Paraboloid<Scalar>& P0, Scalar gamma,
                       const AugmentedState<Scalar>& X, const IqcSystem<Scalar>& sys) {
  const Paraboloid<Scalar> Pg = scale_paraboloid(P0, gamma);
  const VectorX<Scalar> u = sys.u()(Scalar(0));
  const VectorX<Scalar> w = optimal_disturbance(Pg, X.x, u, sys);
  return sys.energy_rate(X.x, u, w);
}

struct TouchingConfig {
  IntegratorConfig integrator;
  double touch_tol = 0;  // 0: 100 x integrator.rel_tol
  // Retry steps that drift off the surface by more than touch_tol. Steps
  // shorter than min_retry_step x t_end are accepted regardless (the drift is
  // then recorded in h_samples).
  bool reject_drift = true;
  double min_retry_step = 1e-7;

  double effective_touch_tol() const {
    return touch_tol > 0 ? touch_tol : 100 * integrator.rel_tol;
  }
};

/// Integrates the augmented system driven by w* of the time-varying
/// paraboloid from a state X0 on the seed boundary, over
/// [0, min(t_end, end of the paraboloid's domain)]. The parameters (E, f, g)
/// are co-integrated with (x, x_q) from the paraboloid's initial sample, so
/// w* is evaluated from a paraboloid that solves the flow on the same steps
/// and h is a first integral of the combined system. A step whose endpoint
/// drifts off the surface by more than touch_tol is rejected and retried
/// with half the step; the state is never projected back.
template <typename Scalar>
AugmentedTrajectory<Scalar> touching_trajectory(const TimeVaryingParaboloid<Scalar>& P,
                                                const AugmentedState<Scalar>& X0,
                                                const IqcSystem<Scalar>& sys,
                                                const TouchingConfig& cfg) {
  const auto n = sys.n();
  if (X0.x.size() != n || P.n() != n)
    throw DimensionMismatch("touching_trajectory: dimension mismatch");
  const Scalar touch_tol = Scalar(cfg.effective_touch_tol());
  const Scalar h0 = value_function(P.sample(0), X0);
  if (!(std::abs(h0) <= touch_tol)) throw NotOnBoundary("initial state is not on the paraboloid surface");
  const Scalar t_end = std::min(Scalar(cfg.integrator.t_end), P.end_time());
  if (!(t_end > 0)) throw OutOfDomain("touching_trajectory: empty time domain");

  // y = [x; x_q; packed E; f; g]
  const auto np = packed_size(n);
  const MatrixX<Scalar> G = g_quadrature_matrix(sys);
  auto params = [&](const VectorX<Scalar>& y) {
    return P.unpack(y.tail(np + n + 1));
  };
  auto rhs = [&](Scalar t, const VectorX<Scalar>& y) {
    const VectorX<Scalar> x = y.head(n);
    const Paraboloid<Scalar> Pt = params(y);
    const VectorX<Scalar> u = sys.u()(t);
    const VectorX<Scalar> w = optimal_disturbance(Pt, x, u, sys);
    VectorX<Scalar> dy(y.size());
    dy.head(n) = sys.drift(x, u, w);
    dy[n] = sys.energy_rate(x, u, w);
    dy.segment(n + 1, np) = pack_symmetric(riccati_rhs(Pt.E, sys));
    dy.segment(n + 1 + np, n) = f_rhs(Pt.E, Pt.f, sys, u);
    dy[n + 1 + np + n] = g_rhs(G, Pt.f, u);
    return dy;
  };

  AugmentedTrajectory<Scalar> traj;
  auto record = [&](Scalar t, const VectorX<Scalar>& y, Scalar h) {
    traj.grid.push_back(t);
    traj.x_samples.push_back(y.head(n));
    traj.xq_samples.push_back(y[n]);
    traj.w_samples.push_back(optimal_disturbance(params(y), VectorX<Scalar>(y.head(n)), sys.u()(t), sys));
    traj.h_samples.push_back(h);
  };

  VectorX<Scalar> y0(n + 1 + np + n + 1);
  y0 << X0.x, X0.xq, P.state(0);
  record(Scalar(0), y0, h0);

  const Scalar min_retry = Scalar(cfg.min_retry_step) * t_end;
  auto on_step = [&](Scalar t0, const VectorX<Scalar>&, const VectorX<Scalar>&, Scalar t1,
                     const VectorX<Scalar>& y1, const VectorX<Scalar>&) {
    const Scalar h1 = value_function(params(y1), AugmentedState<Scalar>{y1.head(n), y1[n]});
    if (cfg.reject_drift && !(std::abs(h1) <= touch_tol) && t1 - t0 > min_retry)
      return StepVerdict::reject;
    record(t1, y1, h1);
    return StepVerdict::accept;
  };

  integrate(rhs, Scalar(0), y0, t_end, cfg.integrator.step_control<Scalar>(), on_step);
  return traj;
}

}  // namespace parareach
