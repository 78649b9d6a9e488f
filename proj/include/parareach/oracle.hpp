#pragma once

// Brute-force evidence independent of the paraboloid flow: admissible
// trajectories of the constrained plant, driven by sampled disturbances and
// integrated directly, plus soundness and coverage measures of a family.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "parareach/dopri.hpp"
#include "parareach/errors.hpp"
#include "parareach/family.hpp"
#include "parareach/model.hpp"
#include "parareach/parallel.hpp"
#include "parareach/seed_geometry.hpp"
#include "parareach/touching.hpp"

namespace parareach {

struct OracleConfig {
  int n_trajectories = 1000;
  int segments = 8;              // piecewise-constant disturbance intervals
  double w_scale = 1.0;          // std. deviation of the random disturbance
  std::uint64_t seed = 0;
  double t_end = 1.0;
  std::vector<double> output_times;  // recorded exactly; t_end always is
  // Fraction of trajectories steered by w* of a random family member, blended
  // per segment by a factor in [blend_min, blend_max], plus noise_scale *
  // w_scale noise. blend_max < 1 keeps trajectories that would run along
  // x_q = 0 strictly admissible.
  double enrich_fraction = 0.5;
  double blend_min = 0.5;
  double blend_max = 0.999;
  double noise_scale = 0.1;
  // Share of steered and feedback trajectories that start on the seed surface near its
  // rim {q0(x) = 0, x_q = 0}, where the touching trajectories of the scaled
  // members start: x_q(0) is the largest admissible budget and the ellipsoidal
  // radius^2 of x is uniform in [1 - rim_depth, 1] of the rim's.
  double surface_start_fraction = 0.6;
  double rim_depth = 0.05;
  // Fraction of trajectories driven by a random linear feedback w = K x plus
  // the segment offsets, K = s * Q with Q a Haar-random (semi-)orthogonal
  // matrix and s = blend_max * feedback_gain * (1 - U^6), which concentrates
  // near the largest gain. feedback_gain <= 0 picks sqrt(||M_x|| / ||M_w||),
  // the gain up to which a pure state penalty still pays for the disturbance.
  // These trajectories share the surface starts of the steered ones.
  double feedback_fraction = 0.45;
  double feedback_gain = 0.0;
  double min_acceptance = 1e-3;
  bool record_steps = false;     // keep every accepted step, not only outputs
  IntegratorConfig integrator{1e-10, 1e-12, 0.05, 1e7, 1.0};

  void validate() const {
    if (n_trajectories < 1) throw ConfigError("oracle needs at least one trajectory");
    if (segments < 1) throw ConfigError("oracle needs at least one disturbance segment");
    if (!(w_scale >= 0) || !(noise_scale >= 0)) throw ConfigError("oracle scales must be >= 0");
    if (!(t_end > 0)) throw ConfigError("oracle horizon must be positive");
    if (!(enrich_fraction >= 0 && enrich_fraction <= 1))
      throw ConfigError("enrich_fraction must lie in [0, 1]");
    if (!(blend_min >= 0 && blend_min <= blend_max && blend_max <= 1))
      throw ConfigError("blend factors must satisfy 0 <= blend_min <= blend_max <= 1");
    if (!(surface_start_fraction >= 0 && surface_start_fraction <= 1))
      throw ConfigError("surface_start_fraction must lie in [0, 1]");
    if (!(rim_depth >= 0 && rim_depth <= 1)) throw ConfigError("rim_depth must lie in [0, 1]");
    if (!(feedback_fraction >= 0 && enrich_fraction + feedback_fraction <= 1))
      throw ConfigError("enrich_fraction + feedback_fraction must lie in [0, 1]");
    if (!(min_acceptance > 0 && min_acceptance <= 1))
      throw ConfigError("min_acceptance must lie in (0, 1]");
    for (double t : output_times)
      if (!(t >= 0 && t <= t_end)) throw ConfigError("oracle output time outside [0, t_end]");
    integrator.validate();
  }
};

/// Uniform draw from P0 ∩ X+ = {(x, x_q) : 0 <= x_q <= kappa - (x-c)^T E0 (x-c)}
/// by rejection from the cylinder over the seed ellipsoid.
template <typename Scalar, typename Rng>
AugmentedState<Scalar> sample_seed_state(const SeedEllipse<Scalar>& ell, Rng& rng) {
  if (!(ell.kappa > 0)) throw RejectionStarvation("the seed set P0 ∩ X+ has empty interior");
  const auto n = ell.dim();
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    VectorX<Scalar> z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = Scalar(N(rng));
    const Scalar radius = Scalar(std::pow(U(rng), 1.0 / double(n)));
    z *= radius / z.norm();
    const Scalar rho2 = z.squaredNorm() * ell.kappa;
    const Scalar xq = Scalar(U(rng)) * ell.kappa;
    if (xq <= ell.kappa - rho2) return {ell.point(z.normalized(), rho2), xq};
  }
  throw RejectionStarvation("could not draw a seed state");
}

namespace oracle_detail {

template <typename Scalar>
std::vector<Scalar> breakpoints(const OracleConfig& cfg) {
  std::vector<Scalar> b{Scalar(0), Scalar(cfg.t_end)};
  for (int k = 1; k < cfg.segments; ++k)
    b.push_back(Scalar(cfg.t_end) * Scalar(k) / Scalar(cfg.segments));
  for (double t : cfg.output_times) b.push_back(Scalar(t));
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  return b;
}

/// One attempt; std::nullopt when the trajectory leaves X+.
template <typename Scalar>
std::optional<AugmentedTrajectory<Scalar>> attempt(
    const IqcSystem<Scalar>& sys, const SeedEllipse<Scalar>& ell,
    const ParaboloidFamily<Scalar>* family, const std::vector<std::size_t>& steering,
    const OracleConfig& cfg, const std::vector<Scalar>& stops, std::uint64_t index) {
  std::seed_seq sseq{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32),
                     std::uint32_t(index), std::uint32_t(index >> 32)};
  std::mt19937_64 rng(sseq);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const auto n = sys.n(), m = sys.m();

  AugmentedState<Scalar> X0 = sample_seed_state(ell, rng);
  const double mode = U(rng);
  const bool enrich = !steering.empty() && mode < cfg.enrich_fraction;
  const bool feedback = !enrich && mode >= cfg.enrich_fraction &&
                        mode < cfg.enrich_fraction + cfg.feedback_fraction;
  if ((enrich || feedback) && U(rng) < cfg.surface_start_fraction) {
    VectorX<Scalar> z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = Scalar(N(rng));
    const Scalar rho2 = ell.kappa * Scalar(1.0 - cfg.rim_depth * U(rng));
    X0 = {ell.point(z.normalized(), rho2), std::max(Scalar(0), ell.kappa - rho2)};
  }
  const TimeVaryingParaboloid<Scalar>* member = nullptr;
  if (enrich) {
    std::uniform_int_distribution<std::size_t> pick(0, steering.size() - 1);
    member = &family->members[steering[pick(rng)]];
  }
  const Scalar amplitude =
      Scalar(enrich || feedback ? cfg.noise_scale * cfg.w_scale : cfg.w_scale);
  std::vector<VectorX<Scalar>> offsets(static_cast<std::size_t>(cfg.segments));
  std::vector<Scalar> blends(offsets.size(), Scalar(1));
  MatrixX<Scalar> gain;  // empty unless feedback
  if (feedback) {
    // Sign-corrected QR factor of a Gaussian matrix: Haar distributed, so
    // rotations and reflections are equally likely and |K x| = s |x| for m >= n.
    MatrixX<Scalar> R(std::max(m, n), std::max(m, n));
    for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = Scalar(N(rng));
    const Eigen::HouseholderQR<MatrixX<Scalar>> qr(R);
    MatrixX<Scalar> Q = qr.householderQ();
    for (Eigen::Index j = 0; j < Q.cols(); ++j)
      if (qr.matrixQR()(j, j) < 0) Q.col(j) = -Q.col(j);
    const Scalar gmax = cfg.feedback_gain > 0 ? Scalar(cfg.feedback_gain)
                                              : std::sqrt(sys.Mx().norm() / sys.Mw().norm());
    gain = gmax * Scalar(cfg.blend_max * (1.0 - std::pow(U(rng), 6.0))) *
           Q.topLeftCorner(m, n);
  }
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    offsets[k].resize(m);
    for (Eigen::Index i = 0; i < m; ++i) offsets[k][i] = amplitude * Scalar(N(rng));
    if (enrich) blends[k] = Scalar(cfg.blend_min + (cfg.blend_max - cfg.blend_min) * U(rng));
  }
  const Scalar seg_len = Scalar(cfg.t_end) / Scalar(cfg.segments);
  auto segment_of = [&](Scalar t) {
    const auto k = static_cast<std::size_t>(std::floor(t / seg_len));
    return std::min(k, offsets.size() - 1);
  };

  auto disturbance = [&](std::size_t seg, Scalar t, const VectorX<Scalar>& x) {
    VectorX<Scalar> w = offsets[seg];
    if (gain.size() > 0) w += gain * x;
    if (member) {
      const Scalar tc = std::min(t, member->end_time());
      w += blends[seg] * optimal_disturbance(eval_paraboloid(*member, tc), x, sys.u()(t), sys);
    }
    return w;
  };

  AugmentedTrajectory<Scalar> traj;
  auto record = [&](std::size_t seg, Scalar t, const VectorX<Scalar>& y) {
    traj.grid.push_back(t);
    traj.x_samples.push_back(y.head(n));
    traj.xq_samples.push_back(y[n]);
    traj.w_samples.push_back(disturbance(seg, t, y.head(n)));
  };

  VectorX<Scalar> y(n + 1);
  y << X0.x, X0.xq;
  record(0, Scalar(0), y);
  const auto ctrl = cfg.integrator.step_control<Scalar>();
  for (std::size_t b = 0; b + 1 < stops.size(); ++b) {
    const Scalar ta = stops[b], tb = stops[b + 1];
    const std::size_t seg = segment_of(Scalar(0.5) * (ta + tb));
    auto rhs = [&](Scalar t, const VectorX<Scalar>& s) {
      const VectorX<Scalar> x = s.head(n);
      const VectorX<Scalar> u = sys.u()(t);
      const VectorX<Scalar> w = disturbance(seg, t, x);
      VectorX<Scalar> ds(n + 1);
      ds.head(n) = sys.drift(x, u, w);
      ds[n] = sys.energy_rate(x, u, w);
      return ds;
    };
    bool left = false;
    auto on_step = [&](Scalar, const VectorX<Scalar>&, const VectorX<Scalar>&, Scalar t1,
                       const VectorX<Scalar>& y1, const VectorX<Scalar>&) {
      if (y1[n] < 0) {
        left = true;
        return StepVerdict::stop;
      }
      if (cfg.record_steps && t1 < tb) record(seg, t1, y1);
      return StepVerdict::accept;
    };
    const auto res = integrate(rhs, ta, y, tb, ctrl, on_step);
    if (left) return std::nullopt;
    y = res.y;
    record(seg, tb, y);
  }
  return traj;
}

}  // namespace oracle_detail

/// Draws admissible trajectories: X(0) uniform in P0 ∩ X+, piecewise-constant
/// random disturbances, a share of trajectories under random linear feedback,
/// and (with a family) a share steered by a member's optimal disturbance. Trajectories whose energy budget turns
/// negative at an accepted step are discarded. Attempt i uses its own RNG
/// stream, and the first n_trajectories admissible attempts in index order
/// are kept, so the result does not depend on the worker count.
template <typename Scalar>
std::vector<AugmentedTrajectory<Scalar>> sample_admissible(
    const IqcSystem<Scalar>& sys, const Paraboloid<Scalar>& P0, const OracleConfig& cfg,
    const ParaboloidFamily<Scalar>* family = nullptr) {
  cfg.validate();
  if (P0.dim() != sys.n()) throw DimensionMismatch("sample_admissible: seed and system differ");
  const SeedEllipse<Scalar> ell = seed_ellipse(P0);
  const std::vector<Scalar> stops = oracle_detail::breakpoints<Scalar>(cfg);

  std::vector<std::size_t> steering;
  if (family)
    for (std::size_t i = 0; i < family->members.size(); ++i)
      if (family->members[i].end_time() >= Scalar(cfg.t_end)) steering.push_back(i);

  const auto wanted = static_cast<std::size_t>(cfg.n_trajectories);
  const auto max_attempts =
      static_cast<std::size_t>(std::ceil(double(wanted) / cfg.min_acceptance));
  std::vector<AugmentedTrajectory<Scalar>> out;
  std::size_t next = 0;
  while (out.size() < wanted) {
    if (next >= max_attempts)
      throw RejectionStarvation("acceptance rate below " + std::to_string(cfg.min_acceptance) +
                                " (" + std::to_string(out.size()) + " of " +
                                std::to_string(next) + " attempts admissible)");
    const double rate = next == 0 ? 1.0 : std::max(double(out.size()) / double(next), cfg.min_acceptance);
    const std::size_t batch = std::min(
        max_attempts - next,
        std::max<std::size_t>(64, static_cast<std::size_t>(1.2 * double(wanted - out.size()) / rate)));
    std::vector<std::optional<AugmentedTrajectory<Scalar>>> slots(batch);
    parallel_for(batch, [&](std::size_t i) {
      slots[i] = oracle_detail::attempt(sys, ell, family, steering, cfg, stops, next + i);
    });
    next += batch;
    for (auto& s : slots) {
      if (out.size() == wanted) break;
      if (s) out.push_back(std::move(*s));
    }
  }
  return out;
}

/// States of every trajectory at time t (which must be a recorded sample).
template <typename Scalar>
std::vector<AugmentedState<Scalar>> endpoints_at(
    const std::vector<AugmentedTrajectory<Scalar>>& trajs, Scalar t) {
  std::vector<AugmentedState<Scalar>> out;
  out.reserve(trajs.size());
  for (const auto& tr : trajs) {
    const auto it = std::find(tr.grid.begin(), tr.grid.end(), t);
    if (it == tr.grid.end())
      throw OutOfDomain("time " + std::to_string(double(t)) + " is not an oracle output time");
    out.push_back(tr.state(static_cast<std::size_t>(it - tr.grid.begin())));
  }
  return out;
}

struct SoundnessViolation {
  std::size_t trajectory = 0;
  double t = 0;
  double margin = 0;
  double xq = 0;
};

struct SoundnessReport {
  std::size_t checked = 0;
  double worst_margin = -std::numeric_limits<double>::infinity();
  std::vector<SoundnessViolation> violations;
  bool passed() const { return violations.empty(); }
};

/// Every admissible endpoint must lie in the family intersection: margin at
/// most tol and x_q >= 0.
template <typename Scalar>
SoundnessReport soundness(const ParaboloidFamily<Scalar>& F,
                          const std::vector<AugmentedTrajectory<Scalar>>& trajs,
                          const std::vector<Scalar>& times, Scalar tol = Scalar(1e-8)) {
  SoundnessReport rep;
  for (Scalar t : times) {
    const auto pts = endpoints_at(trajs, t);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const Membership<Scalar> mb = intersection_membership(F, t, pts[k]);
      ++rep.checked;
      rep.worst_margin = std::max(rep.worst_margin, double(mb.margin));
      if (mb.margin > tol || pts[k].xq < 0)
        rep.violations.push_back({k, double(t), double(mb.margin), double(pts[k].xq)});
    }
  }
  return rep;
}

template <typename Scalar>
struct CoverageReport {
  double coverage = 0;
  std::size_t inside_cells = 0;
  std::size_t covered_cells = 0;
  std::size_t endpoints_outside_grid = 0;
  std::vector<VectorX<Scalar>> gaps;  // centers of uncovered inside cells
};

/// Share of grid cells whose center lies in the projected intersection and
/// that contain at least one endpoint.
template <typename Scalar>
CoverageReport<Scalar> coverage(const ParaboloidFamily<Scalar>& F, Scalar t,
                                const std::vector<AugmentedState<Scalar>>& endpoints,
                                const RegularGrid<Scalar>& grid) {
  const ReachSlice<Scalar> s = reach_slice(F, t, grid.centers());
  std::vector<char> hit(grid.size(), 0);
  CoverageReport<Scalar> rep;
  for (const auto& X : endpoints) {
    if (const auto c = grid.locate(X.x))
      hit[*c] = 1;
    else
      ++rep.endpoints_outside_grid;
  }
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (!s.inside(k)) continue;
    ++rep.inside_cells;
    if (hit[k])
      ++rep.covered_cells;
    else
      rep.gaps.push_back(s.x_grid[k]);
  }
  rep.coverage = rep.inside_cells ? double(rep.covered_cells) / double(rep.inside_cells) : 0.0;
  return rep;
}

}  // namespace parareach
