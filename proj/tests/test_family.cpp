#include "doctest.h"

#include <algorithm>
#include <map>
#include <random>

#include "parareach/family.hpp"
#include "parareach/io.hpp"
#include "support.hpp"

using namespace parareach;
using namespace parareach::test;

namespace {

FamilyConfig family_config(double t_end, int members) {
  FamilyConfig c;
  c.integrator.t_end = t_end;
  c.n_members = members;
  return c;
}

const Paraboloid<double>& sec5_seed() {
  static const auto p = io::preset("sec5");
  return p.seed;
}

const ParaboloidFamily<double>& sec5_family(int members) {
  static std::map<int, ParaboloidFamily<double>> cache;
  auto it = cache.find(members);
  if (it == cache.end()) {
    FamilyConfig fc = family_config(1.0, members);
    fc.spacing = GammaSpacing::geometric;
    it = cache.emplace(members, build_family(sec5_seed(), sec5_system(), fc)).first;
  }
  return it->second;
}

double scalar_xq_max(const ParaboloidFamily<double>& F, double t, double x) {
  return reach_slice(F, t, {Eigen::VectorXd::Constant(1, x)}).xq_max[0];
}

}  // namespace

TEST_CASE("gamma bar of the scalar example is sqrt 2") {
  // rate(gamma) = x^2 (1 - gamma^2 / 2) on the whole slab.
  const auto seed = scalar_seed(1, 0, -0.09);
  const double gb = gamma_bar(seed, ex1_system(), default_eps_q(seed));
  CHECK(gb == doctest::Approx(sqrt2).epsilon(1e-12));
}

TEST_CASE("gamma bar of the 2-D example is sqrt 2 / b") {
  // Along the eigenvector of E0 with eigenvalue b the rate is
  // |x|^2 (1 - gamma^2 b^2 / 2); the other eigenvalue gives a smaller root.
  const double gb = gamma_bar(sec5_seed(), sec5_system(), default_eps_q(sec5_seed()));
  CHECK(gb == doctest::Approx(1414213.562373095).epsilon(1e-9));
}

TEST_CASE("gamma bar is clamped to 1 when no scaling has rising energy") {
  Eigen::MatrixXd A(1, 1), B(1, 1), Bu(1, 1);
  A << -1;
  B << 1;
  Bu << 0;
  const Eigen::MatrixXd M = Eigen::Vector3d(-1, 1, -2).asDiagonal();
  const auto sys = make_system(A, B, Bu, M, InputSignal<double>::zero(1));
  const auto seed = scalar_seed(1, 0, -0.09);
  CHECK(gamma_bar(seed, sys, default_eps_q(seed)) == 1);
  const auto F = build_family(seed, sys, family_config(1, 8));
  CHECK(F.gammas.size() == 1);
  CHECK(F.members.size() == 1);
}

TEST_CASE("gamma bar bounds the rising-energy scalings on the slab") {
  const auto sys = sec5_system();
  const auto& seed = sec5_seed();
  const double eps = default_eps_q(seed);
  SlabSampler coarse{64, 3};
  const double gb = gamma_bar(seed, sys, eps, coarse);
  for (const auto& x : slab_points(seed, eps, coarse)) {
    const AugmentedState<double> X{x, 0.0};
    for (double f : {1.0 + 1e-6, 1.01, 2.0, 100.0})
      CHECK(xq_rate_at_zero(seed, gb * f + 1e-9, X, sys) < 0);
  }
}

TEST_CASE("gamma bar needs a bounded slab") {
  Eigen::Matrix2d E;
  E << 1, 0, 0, -1;
  const auto seed = make_paraboloid<double>(E, Eigen::VectorXd::Zero(2), -1.0);
  CHECK_THROWS_AS(gamma_bar(seed, sec5_system(), 1e-3), UnboundedSlab);
  CHECK_THROWS_AS(gamma_bar(sec5_seed(), sec5_system(), 0.0), ConfigError);
}

TEST_CASE("gamma spacing") {
  const auto u = spaced_gammas(5.0, 5, GammaSpacing::uniform);
  CHECK(u == std::vector<double>{1, 2, 3, 4, 5});
  const auto g = spaced_gammas(16.0, 5, GammaSpacing::geometric);
  CHECK(g.front() == 1);
  CHECK(g.back() == 16);
  CHECK(g[2] == doctest::Approx(4));
  CHECK(spaced_gammas(16.0, 1, GammaSpacing::uniform) == std::vector<double>{1});
  CHECK_THROWS_AS(spaced_gammas(16.0, 0, GammaSpacing::uniform), ConfigError);
}

TEST_CASE("explicit scalings reproduce the five-member example") {
  const auto p = io::preset("ex1-family");
  FamilyConfig fc = family_config(p.horizon, 0);
  fc.gammas = {1, 1.6, 2.2, 2.7, 3.3};
  const auto F = build_family(p.seed, p.system, fc);
  REQUIRE(F.members.size() == 5);
  CHECK(F.gammas == std::vector<double>{1, 1.6, 2.2, 2.7, 3.3});
  for (std::size_t i = 0; i < F.size(); ++i) {
    const auto s = F.members[i].sample(0);
    const auto expect = scale_paraboloid(p.seed, F.gammas[i]);
    CHECK(s.E == expect.E);
    CHECK(s.g == expect.g);
    CHECK(F.members[i].gamma() == F.gammas[i]);
  }
  // gamma = 1 is always included.
  fc.gammas = {2.0, 1.5};
  const auto G = build_family(p.seed, p.system, fc);
  CHECK(G.gammas == std::vector<double>{1, 1.5, 2});
  fc.gammas = {0.5};
  CHECK_THROWS_AS(build_family(p.seed, p.system, fc), ConfigError);
}

TEST_CASE("strict tightening against the single seed propagation") {
  const auto p = io::preset("ex1-family");
  FamilyConfig fc = family_config(p.horizon, 0);
  fc.gammas = {1, 1.6, 2.2, 2.7, 3.3};
  const auto F = build_family(p.seed, p.system, fc);
  FamilyConfig one = family_config(p.horizon, 1);
  const auto S = build_family(p.seed, p.system, one);
  double best = 0;
  for (int k = -200; k <= 200; ++k) {
    const double x = 0.005 * k;
    const double gap = scalar_xq_max(S, 1.62, x) - scalar_xq_max(F, 1.62, x);
    CHECK(gap >= -1e-12);
    best = std::max(best, gap);
  }
  CHECK(best > 1e-6);
}

TEST_CASE("a singleton family is the seed propagation") {
  const auto p = io::preset("ex1-stable");
  const auto F = build_family(p.seed, p.system, family_config(2, 1));
  REQUIRE(F.members.size() == 1);
  CHECK(F.gamma_bar == 1);
  const auto P = propagate(p.seed, p.system, family_config(2, 1).integrator);
  for (double x : {-0.3, 0.0, 0.1, 0.25}) {
    const auto Pt = eval_paraboloid(P, 1.5);
    CHECK(scalar_xq_max(F, 1.5, x) == -quadratic_part(Pt, Eigen::VectorXd::Constant(1, x)));
  }
}

TEST_CASE("more members never loosen the slice") {
  const auto& F16 = sec5_family(16);
  // The 16 geometric scalings plus their midpoints: a strict superset.
  std::vector<double> g = F16.gammas;
  for (std::size_t i = 0; i + 1 < F16.gammas.size(); ++i)
    g.push_back(std::sqrt(F16.gammas[i] * F16.gammas[i + 1]));
  FamilyConfig fc = family_config(1.0, 0);
  fc.gammas = g;
  const auto F31 = build_family(sec5_seed(), sec5_system(), fc);
  REQUIRE(F31.size() == 31);
  std::vector<Eigen::VectorXd> pts;
  for (int i = -20; i <= 20; ++i)
    for (int j = -20; j <= 20; ++j) pts.push_back(Eigen::Vector2d(4.0 * i, 4.0 * j));
  for (double t : {0.25, 0.794, 1.0}) {
    const auto a = reach_slice(F16, t, pts), b = reach_slice(F31, t, pts);
    for (std::size_t k = 0; k < pts.size(); ++k) CHECK(b.xq_max[k] <= a.xq_max[k]);
  }
}

TEST_CASE("slice values do not depend on member order") {
  auto F = sec5_family(16);
  std::vector<Eigen::VectorXd> pts;
  for (int i = -10; i <= 10; ++i)
    for (int j = -10; j <= 10; ++j) pts.push_back(Eigen::Vector2d(7.0 * i, 7.0 * j));
  const auto a = reach_slice(F, 0.794, pts);
  std::mt19937_64 rng(1);
  std::shuffle(F.members.begin(), F.members.end(), rng);
  const auto b = reach_slice(F, 0.794, pts);
  CHECK(a.xq_max == b.xq_max);
  CHECK(a.argmin_gamma == b.argmin_gamma);
}

TEST_CASE("the 2-D slice at t = 0.794 is not convex") {
  const auto& F = sec5_family(64);
  const auto box = uniform_grid<double>(Eigen::Vector2d(-100, -100), Eigen::Vector2d(100, 100), 1);
  const auto grid = bounding_grid(F, 0.794, box, 32);
  const auto s = reach_slice(F, 0.794, grid.centers());
  std::vector<Eigen::VectorXd> inside;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (s.inside(k)) inside.push_back(s.x_grid[k]);
  REQUIRE(inside.size() > 10);
  bool witness = false;
  for (std::size_t i = 0; i < inside.size() && !witness; ++i)
    for (std::size_t j = i + 1; j < inside.size() && !witness; ++j) {
      const Eigen::VectorXd mid = (inside[i] + inside[j]) / 2;
      witness = reach_slice(F, 0.794, {mid}).xq_max[0] < 0;
    }
  CHECK(witness);
}

TEST_CASE("every member of the 64-member 2-D family lives on [0, 1]") {
  const auto& F = sec5_family(64);
  CHECK(F.size() == 64);
  CHECK(F.gammas.front() == 1);
  CHECK(F.gamma_bar == doctest::Approx(1414213.562373095).epsilon(1e-9));
  for (const auto& m : F.members) {
    CHECK_FALSE(m.escape_time().has_value());
    CHECK(m.end_time() == 1.0);
  }
  CHECK(std::isfinite(F.K_bound));
  CHECK(F.K_bound > 0);
}

TEST_CASE("intersection membership") {
  const auto& F = sec5_family(16);
  const AugmentedState<double> neg{Eigen::Vector2d(0, 0), -1e-9};
  CHECK_FALSE(intersection_membership(F, 0.5, neg).inside);

  const AugmentedState<double> interior{Eigen::Vector2d(10, -10), 0.001};
  REQUIRE(value_function(sec5_seed(), interior) < 0);
  const auto m = intersection_membership(F, 0.0, interior);
  CHECK(m.inside);
  CHECK(m.margin <= 0);

  const AugmentedState<double> far{Eigen::Vector2d(500, 500), 0.0};
  CHECK_FALSE(intersection_membership(F, 0.5, far).inside);
  CHECK_THROWS_AS(intersection_membership(F, 1.5, interior), OutOfDomain);
  CHECK_THROWS_AS(reach_slice(F, -0.1, {Eigen::VectorXd(Eigen::Vector2d(0, 0))}), OutOfDomain);
}

TEST_CASE("members that escape keep their truncated domains") {
  const auto p = io::preset("ex1-family");
  FamilyConfig fc = family_config(3.0, 0);
  fc.gammas = {1, 2};
  const auto F = build_family(p.seed, p.system, fc);
  REQUIRE(F.members[0].escape_time().has_value());
  const double te = *F.members[0].escape_time();
  // Past the escape of gamma = 1 only the other member constrains the slice.
  if (F.members[1].end_time() > te + 0.01) {
    const double t = te + 0.005;
    const auto s = reach_slice(F, t, {Eigen::VectorXd::Constant(1, 0.1)});
    CHECK(s.member_argmin[0] == 1);
  }
  AssumptionConfig ac;
  ac.touching.integrator.t_end = 3.0;
  const auto rep = check_assumptions(F, p.system, ac);
  CHECK_FALSE(rep.bounded);
  CHECK(rep.escaped_gammas.size() >= 1);
  CHECK_FALSE(rep.passed());
}

TEST_CASE("the 2-D family satisfies both assumptions") {
  const auto& F = sec5_family(64);
  AssumptionConfig ac;
  ac.touching.integrator.t_end = 1.0;
  const auto rep = check_assumptions(F, sec5_system(), ac);
  CHECK(rep.bounded);
  CHECK(rep.falling_energy);
  CHECK(rep.violations.empty());
  // 16 launch directions plus the 4 principal axes of the seed ellipse.
  CHECK(rep.trajectories_checked == 64u * 20u);
  CHECK(rep.K_bound == doctest::Approx(F.K_bound));
}

TEST_CASE("the falling-energy detector fires on a constructed counterexample") {
  const auto sys = ex1_system();
  const double eps = 1e-3;
  // x' = -x + w with x = 1, w = 0: energy rate x^2 = +1 while x_q = -eps/2.
  AugmentedTrajectory<double> traj;
  traj.grid = {0.0, 0.1};
  traj.x_samples = {Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 1.0)};
  traj.xq_samples = {0.01, -eps / 2};
  traj.w_samples = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
  const auto v = falling_energy_violations(traj, sys, eps, 0.0);
  REQUIRE(v.size() == 1);
  CHECK(v[0].t == 0.1);
  CHECK(v[0].xq_rate == doctest::Approx(1.0));

  // A rate of +0.1 is flagged too: x = sqrt(0.1), w = 0.
  traj.x_samples[1] = Eigen::VectorXd::Constant(1, std::sqrt(0.1));
  CHECK(falling_energy_violations(traj, sys, eps, 0.0).size() == 1);
  // Falling energy (large w) is not.
  traj.w_samples[1] = Eigen::VectorXd::Constant(1, 1.0);
  CHECK(falling_energy_violations(traj, sys, eps, 0.0).empty());
  // Points outside the slab are ignored.
  traj.w_samples[1] = Eigen::VectorXd::Zero(1);
  traj.xq_samples[1] = -2 * eps;
  CHECK(falling_energy_violations(traj, sys, eps, 0.0).empty());
}

TEST_CASE("bounding grid encloses the projected intersection") {
  const auto& F = sec5_family(16);
  const auto box = uniform_grid<double>(Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1), 1);
  const auto grid = bounding_grid(F, 0.794, box, 32);
  // Probe a box three times larger: every inside point found there lies in
  // the grid.
  const Eigen::VectorXd mid = (grid.lo + grid.hi) / 2, half = (grid.hi - grid.lo) * 1.5;
  const auto probe = uniform_grid<double>(mid - half, mid + half, 96);
  const auto s = reach_slice(F, 0.794, probe.centers());
  std::size_t inside = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (!s.inside(k)) continue;
    ++inside;
    CHECK(grid.locate(s.x_grid[k]).has_value());
  }
  CHECK(inside > 20);
  CHECK(grid.locate(Eigen::Vector2d(0, 0)).has_value());
  CHECK_FALSE(grid.locate(Eigen::Vector2d(1e4, 0)).has_value());
}
