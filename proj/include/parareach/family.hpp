#pragma once

// Family of propagated scaled seeds, its intersection, and the diagnostics
// that decide whether the intersection can be read as exact.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "parareach/errors.hpp"
#include "parareach/model.hpp"
#include "parareach/parallel.hpp"
#include "parareach/riccati_flow.hpp"
#include "parareach/seed_geometry.hpp"
#include "parareach/touching.hpp"

namespace parareach {

/// Density of the seed-slab sampler used for the scaling bound.
struct SlabSampler {
  int directions = 720;  // besides the +-eigenvectors of E0
  int radial_levels = 4;
};

/// Default slab thickness: 1e-3 of the seed's offset scale.
template <typename Scalar>
Scalar default_eps_q(const Paraboloid<Scalar>& P0) {
  const Scalar scale = std::abs(P0.g);
  return scale > 0 ? Scalar(1e-3) * scale : Scalar(1e-3);
}

/// States x of the slab {x : x^T E0 x - 2 f0^T x + g0 in [0, eps_q]}. The
/// energy-rate test does not depend on x_q, so only x is enumerated.
template <typename Scalar>
std::vector<VectorX<Scalar>> slab_points(const Paraboloid<Scalar>& P0, Scalar eps_q,
                                         const SlabSampler& density) {
  if (!(eps_q > 0)) throw ConfigError("eps_q must be positive");
  const SeedEllipse<Scalar> ell = seed_ellipse(P0);
  const Scalar lo = std::max(ell.kappa, Scalar(0));
  const Scalar hi = ell.kappa + eps_q;
  if (hi < 0) throw ConfigError("the seed slab is empty (seed has no state with x_q >= -eps_q)");
  std::vector<VectorX<Scalar>> pts;
  const int levels = std::max(1, density.radial_levels);
  for (const auto& z : unit_directions(ell, density.directions)) {
    for (int k = 0; k < levels; ++k) {
      const Scalar s = levels == 1 ? Scalar(0) : Scalar(k) / Scalar(levels - 1);
      pts.push_back(ell.point(z, lo + s * (hi - lo)));
    }
  }
  return pts;
}

/// Largest real root of a gamma^2 + b gamma + c, if any.
template <typename Scalar>
std::optional<Scalar> largest_root(const RateQuadratic<Scalar>& q) {
  const Scalar scale = std::abs(q.a) + std::abs(q.b) + std::abs(q.c);
  if (scale == 0) return std::nullopt;
  if (std::abs(q.a) <= Scalar(1e-14) * scale) {
    if (q.b < 0) return -q.c / q.b;
    if (q.b > 0 || q.c >= 0)
      throw UnboundedSlab("energy rate does not fall with the scaling; gamma bar is undefined");
    return std::nullopt;
  }
  const Scalar disc = q.b * q.b - 4 * q.a * q.c;
  if (disc < 0) return std::nullopt;
  const Scalar sq = std::sqrt(disc);
  // Cancellation-free pair of roots.
  const Scalar qq = Scalar(-0.5) * (q.b + (q.b >= 0 ? sq : -sq));
  const Scalar r1 = qq / q.a;
  const Scalar r2 = qq != 0 ? q.c / qq : r1;
  return std::max(r1, r2);
}

/// Supremum over sampled slab states of the scalings whose touching
/// trajectory starts with a nonnegative energy rate; 1 when none rises.
template <typename Scalar>
Scalar gamma_bar(const Paraboloid<Scalar>& P0, const IqcSystem<Scalar>& sys,
                 Scalar eps_q, const SlabSampler& density = {}) {
  Scalar best = 1;
  for (const auto& x : slab_points(P0, eps_q, density)) {
    const RateQuadratic<Scalar> q = xq_rate_coefficients(P0, x, sys);
    if (q.a > 0)
      throw UnboundedSlab("positive quadratic coefficient in the energy rate");
    if (const auto r = largest_root(q)) best = std::max(best, *r);
  }
  return best;
}

enum class GammaSpacing { uniform, geometric };

struct FamilyConfig {
  IntegratorConfig integrator;  // t_end is the horizon T
  double eps_q = 0;             // 0: default_eps_q(seed)
  int n_members = 16;
  std::vector<double> gammas;   // explicit scalings; overrides n_members
  GammaSpacing spacing = GammaSpacing::uniform;
  double gamma_bar = 0;         // > 0: use instead of the slab sampler
  SlabSampler sampler;
};

template <typename Scalar>
struct ParaboloidFamily {
  Paraboloid<Scalar> seed;
  std::vector<Scalar> gammas;  // increasing, gammas[0] = 1
  std::vector<TimeVaryingParaboloid<Scalar>> members;
  Scalar gamma_bar = 1;
  Scalar eps_q = 0;
  Scalar horizon = 0;
  Scalar escape_norm = 0;
  Scalar K_bound = 0;  // max ||E(t)||_F over members on their domains

  std::size_t size() const { return members.size(); }
  /// Supremum of the member domains.
  Scalar end_time() const {
    Scalar t = 0;
    for (const auto& m : members) t = std::max(t, m.end_time());
    return t;
  }
};

template <typename Scalar>
std::vector<Scalar> spaced_gammas(Scalar gbar, int count, GammaSpacing spacing) {
  if (count < 1) throw ConfigError("the family needs at least one member");
  std::vector<Scalar> g(static_cast<std::size_t>(count));
  if (count == 1) return {Scalar(1)};
  for (int k = 0; k < count; ++k) {
    const Scalar s = Scalar(k) / Scalar(count - 1);
    g[k] = spacing == GammaSpacing::uniform ? 1 + s * (gbar - 1) : std::pow(gbar, s);
  }
  g.front() = 1;
  g.back() = gbar;
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

/// Propagates gamma * P0 for every scaling of the family. Members whose
/// Riccati solution escapes keep their truncated domains.
template <typename Scalar>
ParaboloidFamily<Scalar> build_family(const Paraboloid<Scalar>& P0,
                                      const IqcSystem<Scalar>& sys,
                                      const FamilyConfig& cfg) {
  cfg.integrator.validate();
  ParaboloidFamily<Scalar> F;
  F.seed = P0;
  F.eps_q = cfg.eps_q > 0 ? Scalar(cfg.eps_q) : default_eps_q(P0);
  F.horizon = Scalar(cfg.integrator.t_end);
  F.escape_norm = Scalar(cfg.integrator.escape_norm);

  if (!cfg.gammas.empty()) {
    for (double g : cfg.gammas)
      if (!(g >= 1)) throw ConfigError("explicit scalings must be >= 1");
    F.gammas.assign(cfg.gammas.begin(), cfg.gammas.end());
    F.gammas.push_back(1);
    std::sort(F.gammas.begin(), F.gammas.end());
    F.gammas.erase(std::unique(F.gammas.begin(), F.gammas.end()), F.gammas.end());
    F.gamma_bar = F.gammas.back();
  } else {
    if (cfg.n_members < 1) throw ConfigError("the family needs at least one member");
    if (cfg.n_members == 1)
      F.gamma_bar = 1;
    else
      F.gamma_bar = cfg.gamma_bar > 0 ? Scalar(cfg.gamma_bar)
                                      : gamma_bar(P0, sys, F.eps_q, cfg.sampler);
    F.gammas = spaced_gammas(F.gamma_bar, cfg.n_members, cfg.spacing);
  }

  std::vector<std::optional<TimeVaryingParaboloid<Scalar>>> slots(F.gammas.size());
  parallel_for(F.gammas.size(), [&](std::size_t i) {
    slots[i].emplace(propagate(scale_paraboloid(P0, F.gammas[i]), sys, cfg.integrator,
                               F.gammas[i]));
  });
  for (auto& s : slots) {
    F.K_bound = std::max(F.K_bound, s->max_E_norm());
    F.members.push_back(std::move(*s));
  }
  return F;
}

template <typename Scalar>
void require_in_domain(const ParaboloidFamily<Scalar>& F, Scalar t) {
  if (!(t >= 0) || t > F.end_time())
    throw OutOfDomain("time " + std::to_string(static_cast<double>(t)) +
                      " outside the family's definition interval");
}

/// Paraboloids of the members defined at t, with their member indices.
template <typename Scalar>
std::vector<std::pair<std::size_t, Paraboloid<Scalar>>> members_at(
    const ParaboloidFamily<Scalar>& F, Scalar t) {
  require_in_domain(F, t);
  std::vector<std::pair<std::size_t, Paraboloid<Scalar>>> out;
  for (std::size_t i = 0; i < F.members.size(); ++i)
    if (F.members[i].defined_at(t)) out.emplace_back(i, eval_paraboloid(F.members[i], t));
  return out;
}

template <typename Scalar>
struct Membership {
  bool inside = false;
  Scalar margin = 0;      // max member value function; <= 0 inside every member
  std::size_t active = 0; // member attaining the margin
};

template <typename Scalar>
Membership<Scalar> intersection_membership(const ParaboloidFamily<Scalar>& F, Scalar t,
                                           const AugmentedState<Scalar>& X) {
  Membership<Scalar> out;
  out.margin = -std::numeric_limits<Scalar>::infinity();
  for (const auto& [i, P] : members_at(F, t)) {
    const Scalar h = value_function(P, X);
    if (h > out.margin) {
      out.margin = h;
      out.active = i;
    }
  }
  out.inside = X.xq >= 0 && out.margin <= 0;
  return out;
}

/// Largest admissible energy per x: xq_max(x) = min over members of
/// -(x^T E x - 2 f^T x + g). x is in the projected set iff xq_max >= 0.
template <typename Scalar>
struct ReachSlice {
  Scalar t = 0;
  std::vector<VectorX<Scalar>> x_grid;
  std::vector<Scalar> xq_max;
  std::vector<std::size_t> member_argmin;
  std::vector<Scalar> argmin_gamma;

  std::size_t size() const { return x_grid.size(); }
  bool inside(std::size_t k) const { return xq_max[k] >= 0; }
};

template <typename Scalar>
ReachSlice<Scalar> reach_slice(const ParaboloidFamily<Scalar>& F, Scalar t,
                               const std::vector<VectorX<Scalar>>& x_grid) {
  const auto defined = members_at(F, t);
  ReachSlice<Scalar> s;
  s.t = t;
  s.x_grid = x_grid;
  s.xq_max.resize(x_grid.size());
  s.member_argmin.resize(x_grid.size());
  s.argmin_gamma.resize(x_grid.size());
  for (std::size_t k = 0; k < x_grid.size(); ++k) {
    Scalar best = std::numeric_limits<Scalar>::infinity();
    std::size_t arg = 0;
    for (const auto& [i, P] : defined) {
      const Scalar v = -quadratic_part(P, x_grid[k]);
      // Ties go to the lowest scaling, independent of member order.
      if (v < best || (v == best && F.members[i].gamma() < F.members[arg].gamma())) {
        best = v;
        arg = i;
      }
    }
    s.xq_max[k] = best;
    s.member_argmin[k] = arg;
    s.argmin_gamma[k] = F.members[arg].gamma();
  }
  return s;
}

/// Axis-aligned box split into cells; slices are evaluated at cell centers.
template <typename Scalar>
struct RegularGrid {
  VectorX<Scalar> lo, hi;
  std::vector<int> cells;  // per dimension

  Eigen::Index dim() const { return lo.size(); }
  std::size_t size() const {
    std::size_t s = 1;
    for (int c : cells) s *= static_cast<std::size_t>(c);
    return s;
  }
  Scalar width(Eigen::Index d) const { return (hi[d] - lo[d]) / Scalar(cells[d]); }

  VectorX<Scalar> center(std::size_t flat) const {
    VectorX<Scalar> x(dim());
    for (Eigen::Index d = 0; d < dim(); ++d) {
      const auto c = static_cast<int>(flat % static_cast<std::size_t>(cells[d]));
      flat /= static_cast<std::size_t>(cells[d]);
      x[d] = lo[d] + (Scalar(c) + Scalar(0.5)) * width(d);
    }
    return x;
  }
  std::vector<VectorX<Scalar>> centers() const {
    std::vector<VectorX<Scalar>> out;
    out.reserve(size());
    for (std::size_t k = 0; k < size(); ++k) out.push_back(center(k));
    return out;
  }
  /// Flat index of the cell containing x, if x is inside the box.
  std::optional<std::size_t> locate(const VectorX<Scalar>& x) const {
    std::size_t flat = 0, stride = 1;
    for (Eigen::Index d = 0; d < dim(); ++d) {
      const Scalar r = (x[d] - lo[d]) / width(d);
      if (!(r >= 0) || r > Scalar(cells[d])) return std::nullopt;
      const int c = std::min(static_cast<int>(r), cells[d] - 1);
      flat += static_cast<std::size_t>(c) * stride;
      stride *= static_cast<std::size_t>(cells[d]);
    }
    return flat;
  }
};

template <typename Scalar>
RegularGrid<Scalar> uniform_grid(VectorX<Scalar> lo, VectorX<Scalar> hi, int cells_per_dim) {
  if (lo.size() != hi.size()) throw DimensionMismatch("grid bounds differ in size");
  if (cells_per_dim < 1) throw ConfigError("grid needs at least one cell per dimension");
  std::vector<int> cells(static_cast<std::size_t>(hi.size()), cells_per_dim);
  return {std::move(lo), std::move(hi), std::move(cells)};
}

/// Bounding box of the projected intersection {x : xq_max(x) >= 0} at t,
/// found on a grid of `resolution` cells per dimension that grows from
/// `initial` until no inside cell touches its border, then shrinks to the
/// inside cells plus one cell of margin.
template <typename Scalar>
RegularGrid<Scalar> bounding_grid(const ParaboloidFamily<Scalar>& F, Scalar t,
                                  RegularGrid<Scalar> initial, int resolution = 64,
                                  int max_doublings = 24) {
  const auto n = initial.dim();
  RegularGrid<Scalar> g = uniform_grid(initial.lo, initial.hi, resolution);
  for (int iter = 0;; ++iter) {
    const ReachSlice<Scalar> s = reach_slice(F, t, g.centers());
    VectorX<Scalar> in_lo = VectorX<Scalar>::Constant(n, std::numeric_limits<Scalar>::infinity());
    VectorX<Scalar> in_hi = -in_lo;
    bool touches = false, any = false;
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (!s.inside(k)) continue;
      any = true;
      const VectorX<Scalar>& c = s.x_grid[k];
      for (Eigen::Index d = 0; d < n; ++d) {
        const Scalar w = g.width(d);
        in_lo[d] = std::min(in_lo[d], c[d] - w);
        in_hi[d] = std::max(in_hi[d], c[d] + w);
        if (c[d] - w < g.lo[d] || c[d] + w > g.hi[d]) touches = true;
      }
    }
    if (!any) {
      if (iter >= max_doublings) throw OutOfDomain("the projected intersection looks empty");
      // Either empty or thinner than a cell: refine around the same box.
      resolution *= 2;
      if (resolution > 4096) throw OutOfDomain("the projected intersection looks empty");
      g = uniform_grid(g.lo, g.hi, resolution);
      continue;
    }
    if (touches) {
      if (iter >= max_doublings)
        throw OutOfDomain("the projected intersection does not look bounded");
      const VectorX<Scalar> mid = (g.lo + g.hi) / 2;
      const VectorX<Scalar> half = (g.hi - g.lo);
      g = uniform_grid<Scalar>(mid - half, mid + half, resolution);
      continue;
    }
    return uniform_grid<Scalar>(in_lo, in_hi, resolution);
  }
}

struct AssumptionConfig {
  TouchingConfig touching;   // integrator.t_end is the horizon checked
  double margin = 0;         // falling energy requires x_q' < -margin
  int launch_directions = 16;
};

struct FallingEnergyViolation {
  double gamma = 0;
  std::size_t launch = 0;
  double t = 0;
  double xq = 0;
  double xq_rate = 0;
};

struct AssumptionReport {
  // Bounded Riccati solutions on [0, T].
  double K_bound = 0;
  bool bounded = false;
  std::vector<double> escaped_gammas;
  // Falling energy on the null energetic surface.
  bool falling_energy = false;
  std::size_t trajectories_checked = 0;
  std::vector<FallingEnergyViolation> violations;

  bool passed() const { return bounded && falling_energy; }
};

/// Scans a trajectory for points with x_q in [-eps_q, 0] whose energy rate is
/// not below -margin. The launch sample at t = 0 is exempt when it sits on
/// the null surface: family trajectories start there with rising energy by
/// construction.
template <typename Scalar>
std::vector<FallingEnergyViolation> falling_energy_violations(
    const AugmentedTrajectory<Scalar>& traj, const IqcSystem<Scalar>& sys, Scalar eps_q,
    Scalar margin, Scalar gamma = 1, std::size_t launch = 0) {
  std::vector<FallingEnergyViolation> out;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Scalar xq = traj.xq_samples[k];
    if (!(xq >= -eps_q && xq <= 0)) continue;
    if (k == 0 && xq == 0) continue;
    const Scalar rate =
        sys.energy_rate(traj.x_samples[k], sys.u()(traj.grid[k]), traj.w_samples[k]);
    if (!(rate < -margin))
      out.push_back({double(gamma), launch, double(traj.grid[k]), double(xq), double(rate)});
  }
  return out;
}

/// Checks the bounded-Riccati and falling-energy hypotheses. Touching
/// trajectories of the intersection are launched from the null energetic
/// surface on the seed boundary, (x, 0) with x^T E0 x - 2 f0^T x + g0 = 0,
/// which lies on the boundary of every scaled seed. Violations are listed,
/// not thrown.
template <typename Scalar>
AssumptionReport check_assumptions(const ParaboloidFamily<Scalar>& F,
                                   const IqcSystem<Scalar>& sys,
                                   const AssumptionConfig& cfg) {
  AssumptionReport rep;
  const Scalar T = std::min(Scalar(cfg.touching.integrator.t_end), F.horizon);
  rep.K_bound = double(F.K_bound);
  rep.bounded = true;
  for (const auto& m : F.members) {
    const bool escaped = m.escape_time().has_value() && *m.escape_time() <= F.horizon;
    if (escaped || m.end_time() < T || m.max_E_norm() > F.escape_norm) {
      rep.bounded = false;
      rep.escaped_gammas.push_back(double(m.gamma()));
    }
  }

  const SeedEllipse<Scalar> ell = seed_ellipse(F.seed);
  if (ell.kappa < 0) throw ConfigError("the seed has no state with x_q >= 0");
  std::vector<AugmentedState<Scalar>> launches;
  for (const auto& z : unit_directions(ell, cfg.launch_directions))
    launches.push_back({ell.point(z, ell.kappa), Scalar(0)});

  TouchingConfig tc = cfg.touching;
  tc.integrator.t_end = double(T);
  const std::size_t jobs = F.members.size() * launches.size();
  std::vector<std::vector<FallingEnergyViolation>> found(jobs);
  parallel_for(jobs, [&](std::size_t j) {
    const std::size_t mi = j / launches.size(), li = j % launches.size();
    const auto& member = F.members[mi];
    AugmentedState<Scalar> X0 = launches[li];
    // Remove the rounding residue of the boundary parameterization.
    X0.xq = 0;
    const Paraboloid<Scalar> P = member.sample(0);
    // The terms of h grow with the scaling; the launch test is relative to
    // them. Only the sign of the energy rate matters here, so drifting steps
    // are not retried.
    const Scalar scale = std::max(Scalar(1), std::abs(X0.x.dot(P.E * X0.x)) +
                                                 2 * std::abs(P.f.dot(X0.x)) + std::abs(P.g));
    TouchingConfig local = tc;
    local.touch_tol = tc.effective_touch_tol() * double(scale);
    local.reject_drift = false;
    const auto traj = touching_trajectory(member, X0, sys, local);
    found[j] = falling_energy_violations(traj, sys, F.eps_q, Scalar(cfg.margin),
                                         member.gamma(), li);
  });
  rep.trajectories_checked = jobs;
  for (auto& v : found) rep.violations.insert(rep.violations.end(), v.begin(), v.end());
  rep.falling_energy = rep.violations.empty();
  return rep;
}

}  // namespace parareach
