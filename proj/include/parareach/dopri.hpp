#pragma once

// Embedded Dormand-Prince 5(4) pair with PI step-size control and an
// observer hook that can veto accepted steps.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "parareach/errors.hpp"
#include "parareach/model.hpp"

namespace parareach {

template <typename Scalar>
struct StepControl {
  Scalar rel_tol = Scalar(1e-9);
  Scalar abs_tol = Scalar(1e-12);
  Scalar max_step = std::numeric_limits<Scalar>::infinity();
  Scalar initial_step = 0;  // 0: automatic
  int max_steps = 2'000'000;
};

enum class StepVerdict { accept, reject, stop };

template <typename Scalar>
struct RkTrial {
  VectorX<Scalar> y;
  VectorX<Scalar> dy;  // rhs at (t + h, y), reused as first stage next step
  Scalar error = 0;    // scaled RMS error estimate; <= 1 means acceptable
};

template <typename Scalar>
struct IntegrationResult {
  Scalar t = 0;
  VectorX<Scalar> y;
  VectorX<Scalar> dy;
  bool stopped = false;   // the observer returned StepVerdict::stop
  Scalar next_step = 0;   // step size that was being attempted at stop
  long accepted = 0;
  long rejected = 0;
};

namespace dopri_detail {
// Butcher tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                 a75 = -2187.0 / 6784, a76 = 11.0 / 84;
// Difference between the 5th- and 4th-order weights.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace dopri_detail

template <typename Scalar>
Scalar scaled_error_norm(const VectorX<Scalar>& err, const VectorX<Scalar>& y0,
                         const VectorX<Scalar>& y1, Scalar rel_tol,
                         Scalar abs_tol) {
  using std::abs;
  using std::sqrt;
  if (err.size() == 0) return 0;
  Scalar acc = 0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const Scalar sc = abs_tol + rel_tol * std::max(abs(y0[i]), abs(y1[i]));
    const Scalar r = err[i] / sc;
    acc += r * r;
  }
  const Scalar e = sqrt(acc / Scalar(err.size()));
  return std::isfinite(static_cast<double>(e)) ? e
                                               : std::numeric_limits<Scalar>::infinity();
}

/// One Dormand-Prince step of size h from (t, y) with dy = rhs(t, y).
template <typename Scalar, typename Rhs>
RkTrial<Scalar> dopri_step(Rhs& rhs, Scalar t, const VectorX<Scalar>& y,
                           const VectorX<Scalar>& dy, Scalar h,
                           const StepControl<Scalar>& ctrl) {
  using namespace dopri_detail;
  const VectorX<Scalar>& k1 = dy;
  const VectorX<Scalar> k2 = rhs(t + c2 * h, VectorX<Scalar>(y + h * (a21 * k1)));
  const VectorX<Scalar> k3 =
      rhs(t + c3 * h, VectorX<Scalar>(y + h * (a31 * k1 + a32 * k2)));
  const VectorX<Scalar> k4 =
      rhs(t + c4 * h, VectorX<Scalar>(y + h * (a41 * k1 + a42 * k2 + a43 * k3)));
  const VectorX<Scalar> k5 = rhs(
      t + c5 * h,
      VectorX<Scalar>(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
  const VectorX<Scalar> k6 =
      rhs(t + h, VectorX<Scalar>(y + h * (a61 * k1 + a62 * k2 + a63 * k3 +
                                          a64 * k4 + a65 * k5)));
  RkTrial<Scalar> out;
  out.y = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
  out.dy = rhs(t + h, out.y);
  const VectorX<Scalar> err =
      h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * out.dy);
  out.error = out.y.allFinite() && out.dy.allFinite()
                  ? scaled_error_norm(err, y, out.y, ctrl.rel_tol, ctrl.abs_tol)
                  : std::numeric_limits<Scalar>::infinity();
  return out;
}

/// Cubic Hermite interpolation between two accepted steps.
template <typename Scalar>
VectorX<Scalar> hermite_interpolate(Scalar t0, const VectorX<Scalar>& y0,
                                    const VectorX<Scalar>& dy0, Scalar t1,
                                    const VectorX<Scalar>& y1,
                                    const VectorX<Scalar>& dy1, Scalar t) {
  const Scalar h = t1 - t0;
  const Scalar s = (t - t0) / h;
  const Scalar s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * y0 + ((s3 - 2 * s2 + s) * h) * dy0 +
         (-2 * s3 + 3 * s2) * y1 + ((s3 - s2) * h) * dy1;
}

/// Integrates y' = rhs(t, y) from t0 to t_end. After every step that passes
/// the error test, on_step(t0, y0, dy0, t1, y1, dy1) may accept it, reject it
/// (the step is halved and retried) or stop the integration.
template <typename Scalar, typename Rhs, typename OnStep>
IntegrationResult<Scalar> integrate(Rhs&& rhs, Scalar t0, VectorX<Scalar> y0,
                                    Scalar t_end,
                                    const StepControl<Scalar>& ctrl,
                                    OnStep&& on_step) {
  using std::abs;
  using std::max;
  using std::min;
  using std::pow;
  constexpr Scalar safety = Scalar(0.9);
  constexpr Scalar fac_min = Scalar(0.2), fac_max = Scalar(10);
  constexpr Scalar beta = Scalar(0.04);
  constexpr Scalar expo = Scalar(0.2) - beta * Scalar(0.75);

  IntegrationResult<Scalar> res;
  res.t = t0;
  res.y = std::move(y0);
  res.dy = rhs(t0, res.y);
  if (!(t_end > t0)) return res;

  const Scalar span = t_end - t0;
  Scalar h = ctrl.initial_step;
  if (!(h > 0)) {
    // Hairer's starting-step heuristic.
    const Scalar sc0 =
        scaled_error_norm(res.y, res.y, res.y, ctrl.rel_tol, ctrl.abs_tol);
    const Scalar sc1 =
        scaled_error_norm(res.dy, res.y, res.y, ctrl.rel_tol, ctrl.abs_tol);
    h = (sc0 < Scalar(1e-5) || sc1 < Scalar(1e-5)) ? Scalar(1e-6)
                                                    : Scalar(0.01) * sc0 / sc1;
    h = min(h, span);
    const VectorX<Scalar> y1 = res.y + h * res.dy;
    const VectorX<Scalar> f1 = rhs(t0 + h, y1);
    const Scalar d2 =
        scaled_error_norm(VectorX<Scalar>(f1 - res.dy), res.y, res.y,
                          ctrl.rel_tol, ctrl.abs_tol) /
        h;
    const Scalar dmax = max(sc1, d2);
    const Scalar h1 = dmax <= Scalar(1e-15) ? max(Scalar(1e-6), h * Scalar(1e-3))
                                            : pow(Scalar(0.01) / dmax, Scalar(0.2));
    h = min(Scalar(100) * h, h1);
    if (!std::isfinite(static_cast<double>(h)) || !(h > 0)) h = span * Scalar(1e-6);
  }
  h = min({h, ctrl.max_step, span});

  Scalar err_old = Scalar(1e-4);
  bool last_rejected = false;
  for (int iter = 0; iter < ctrl.max_steps; ++iter) {
    const Scalar remaining = t_end - res.t;
    if (remaining <= abs(t_end) * std::numeric_limits<Scalar>::epsilon() * 4) return res;
    bool final_step = false;
    if (h >= remaining) {
      h = remaining;
      final_step = true;
    }
    const Scalar min_step =
        Scalar(16) * std::numeric_limits<Scalar>::epsilon() * max(Scalar(1), abs(res.t));
    if (h < min_step)
      throw StepSizeUnderflow(
          "step size underflow at t = " + std::to_string(static_cast<double>(res.t)),
          static_cast<double>(res.t));

    RkTrial<Scalar> trial = dopri_step(rhs, res.t, res.y, res.dy, h, ctrl);
    if (!(trial.error <= 1)) {
      const Scalar fac = std::isfinite(static_cast<double>(trial.error))
                             ? max(fac_min, safety / pow(trial.error, expo))
                             : fac_min;
      h *= min(Scalar(1), fac);
      ++res.rejected;
      last_rejected = true;
      continue;
    }

    const Scalar t_new = final_step ? t_end : res.t + h;
    const StepVerdict verdict =
        on_step(res.t, res.y, res.dy, t_new, trial.y, trial.dy);
    if (verdict == StepVerdict::reject) {
      h *= Scalar(0.5);
      ++res.rejected;
      last_rejected = true;
      continue;
    }
    if (verdict == StepVerdict::stop) {
      res.stopped = true;
      res.next_step = h;
      return res;
    }

    ++res.accepted;
    res.t = t_new;
    res.y = std::move(trial.y);
    res.dy = std::move(trial.dy);
    if (final_step) return res;

    const Scalar err = max(trial.error, Scalar(1e-10));
    Scalar fac = safety * pow(err_old, beta) / pow(err, expo);
    fac = std::clamp(fac, fac_min, fac_max);
    if (last_rejected) fac = min(fac, Scalar(1));
    h = min(h * fac, ctrl.max_step);
    err_old = err;
    last_rejected = false;
  }
  throw StepSizeUnderflow("maximum number of steps exceeded",
                          static_cast<double>(res.t));
}

}  // namespace parareach
