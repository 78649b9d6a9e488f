// parareach: propagate paraboloids, build reachable-set slices, and check
// them against a brute-force oracle.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "parareach/family.hpp"
#include "parareach/io.hpp"
#include "parareach/oracle.hpp"
#include "parareach/riccati_flow.hpp"

namespace fs = std::filesystem;
using namespace parareach;

namespace {

struct Options {
  std::string system_path;
  std::string example;
  std::vector<double> times;
  std::vector<double> gammas;
  int members = 0;
  double eps_q = 0;
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  int n = 1000;
  std::uint64_t seed = 0;
  std::string out = "parareach-out";
  std::string format = "csv";
  int cells = 64;
  double w_scale = 0;
  std::string slice_path;
};

struct Run {
  std::string name;
  IqcSystem<double> system;
  Paraboloid<double> seed;
  double horizon = 1;
  std::vector<double> times;
  std::vector<double> gammas;
  int members = 16;
  GammaSpacing spacing = GammaSpacing::uniform;
};

Run resolve(const Options& o) {
  if (o.example.empty() == o.system_path.empty())
    throw ConfigError("give exactly one of --example and --system");
  Run r;
  if (!o.example.empty()) {
    io::Preset p = io::preset(o.example);
    r = {p.name, p.system, p.seed, p.horizon, p.times, p.gammas, p.members, p.spacing};
  } else {
    if (!fs::exists(o.system_path))
      throw ConfigError("system file '" + o.system_path + "' does not exist");
    io::SystemFile f = io::load_system_file(o.system_path);
    if (!f.seed) throw ConfigError("system file '" + o.system_path + "' has no \"seed\"");
    r.name = fs::path(o.system_path).stem().string();
    r.system = std::move(f.system);
    r.seed = *f.seed;
    r.horizon = f.horizon.value_or(1.0);
    r.times = {r.horizon};
  }
  if (!o.times.empty()) r.times = o.times;
  for (double t : r.times)
    if (!(t >= 0 && t <= r.horizon))
      throw ConfigError("--time " + std::to_string(t) + " outside [0, horizon]");
  if (!o.gammas.empty()) r.gammas = o.gammas;
  if (o.members > 0) {
    r.members = o.members;
    if (o.gammas.empty()) r.gammas.clear();
  }
  return r;
}

IntegratorConfig integrator(const Options& o, double horizon) {
  IntegratorConfig c;
  c.rel_tol = o.rel_tol;
  c.abs_tol = o.abs_tol;
  c.t_end = horizon;
  c.validate();
  return c;
}

io::Format format(const Options& o) {
  if (o.format == "csv") return io::Format::csv;
  if (o.format == "json") return io::Format::json;
  throw ConfigError("--format must be csv or json");
}

std::string ext(const Options& o) { return o.format == "json" ? ".json" : ".csv"; }

std::string time_tag(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", t);
  return buf;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw ConfigError("cannot write '" + p.string() + "'");
  return os;
}

ParaboloidFamily<double> family(const Options& o, const Run& r) {
  FamilyConfig fc;
  fc.integrator = integrator(o, r.horizon);
  fc.eps_q = o.eps_q;
  fc.n_members = r.members;
  fc.gammas = r.gammas;
  fc.spacing = r.spacing;
  return build_family(r.seed, r.system, fc);
}

AssumptionReport assumptions(const Options& o, const Run& r, const ParaboloidFamily<double>& F) {
  AssumptionConfig ac;
  ac.touching.integrator = integrator(o, r.horizon);
  return check_assumptions(F, r.system, ac);
}

/// Initial search box: the bounding box of the seed ellipsoid, or a unit box.
RegularGrid<double> seed_box(const Paraboloid<double>& P0) {
  const auto n = P0.dim();
  try {
    const SeedEllipse<double> ell = seed_ellipse(P0);
    const Eigen::MatrixXd Einv = P0.E.inverse();
    const Eigen::VectorXd half =
        (std::max(ell.kappa, 1e-12) * Einv.diagonal()).cwiseSqrt();
    return uniform_grid<double>(ell.center - half, ell.center + half, 1);
  } catch (const UnboundedSlab&) {
    return uniform_grid<double>(-Eigen::VectorXd::Ones(n), Eigen::VectorXd::Ones(n), 1);
  }
}

int cells_for(const Options& o, Eigen::Index n) {
  if (n <= 2) return o.cells;
  return std::max(4, static_cast<int>(std::pow(double(o.cells) * o.cells, 1.0 / double(n))));
}

int cmd_propagate(const Options& o) {
  const Run r = resolve(o);
  const auto P = propagate(r.seed, r.system, integrator(o, r.horizon));
  fs::create_directories(o.out);
  auto os = open_out(fs::path(o.out) / ("tvp" + ext(o)));
  io::write_tvp(os, P, format(o));
  open_out(fs::path(o.out) / "manifest.json") << io::tvp_manifest_json(P, r.horizon) << '\n';

  const auto last = P.size() - 1;
  std::cout << r.name << ": " << P.size() << " grid points on [0, " << P.end_time() << "]\n";
  std::cout << "E(" << P.end_time() << ") = " << P.E(last).format(Eigen::IOFormat(10, 0, ", ", "; "))
            << '\n';
  if (P.escape_time() && *P.escape_time() <= r.horizon) {
    std::cout << "finite escape at t = " << *P.escape_time() << '\n';
    return 2;
  }
  return 0;
}

int cmd_reach(const Options& o) {
  const Run r = resolve(o);
  const auto F = family(o, r);
  const AssumptionReport rep = assumptions(o, r, F);
  fs::create_directories(o.out);
  open_out(fs::path(o.out) / "family.json") << io::manifest_json(F, &rep) << '\n';
  std::cout << r.name << ": " << F.size() << " members, gamma in [1, " << F.gamma_bar
            << "], K_bound = " << F.K_bound << '\n';
  std::cout << "bounded Riccati: " << (rep.bounded ? "pass" : "FAIL") << '\n';
  std::cout << "falling energy:  " << (rep.falling_energy ? "pass" : "FAIL")
            << " (" << rep.violations.size() << " violations over "
            << rep.trajectories_checked << " trajectories)\n";

  for (double t : r.times) {
    RegularGrid<double> grid;
    try {
      grid = bounding_grid(F, t, seed_box(r.seed), cells_for(o, r.seed.dim()));
    } catch (const OutOfDomain& e) {
      std::cerr << "warning: t = " << t << ": " << e.what() << "; using the seed box\n";
      RegularGrid<double> box = seed_box(r.seed);
      const Eigen::VectorXd mid = (box.lo + box.hi) / 2, half = (box.hi - box.lo) * 2;
      grid = uniform_grid<double>(mid - half, mid + half, cells_for(o, r.seed.dim()));
    }
    const auto s = reach_slice(F, t, grid.centers());
    auto os = open_out(fs::path(o.out) / ("slice_t" + time_tag(t) + ext(o)));
    io::write_slice(os, s, format(o));
    std::size_t inside = 0;
    for (std::size_t k = 0; k < s.size(); ++k) inside += s.inside(k);
    std::cout << "t = " << t << ": " << inside << " of " << s.size() << " grid points inside\n";
  }
  return 0;
}

OracleConfig oracle_config(const Options& o, const Run& r) {
  if (o.n < 1) throw ConfigError("--n must be >= 1");
  OracleConfig oc;
  oc.n_trajectories = o.n;
  oc.seed = o.seed;
  oc.t_end = r.horizon;
  for (double t : r.times)
    if (t > 0) oc.output_times.push_back(t);
  if (o.w_scale > 0) oc.w_scale = o.w_scale;
  return oc;
}

int cmd_verify(const Options& o) {
  const Run r = resolve(o);
  const OracleConfig oc = oracle_config(o, r);
  const auto F = family(o, r);
  const auto trajs = sample_admissible(r.system, r.seed, oc, &F);
  fs::create_directories(o.out);
  nlohmann::json report;
  report["trajectories"] = trajs.size();
  report["seed"] = o.seed;
  int code = 0;

  if (!o.slice_path.empty()) {
    if (r.times.size() != 1) throw ConfigError("--slice needs exactly one --time");
    std::ifstream in(o.slice_path);
    if (!in) throw ConfigError("cannot open slice file '" + o.slice_path + "'");
    const io::SliceTable table = io::read_slice_csv(in);
    const auto pts = endpoints_at(trajs, r.times[0]);
    const auto bad = io::audit_slice(table, pts);
    std::cout << "slice audit at t = " << r.times[0] << ": " << bad.size() << " violations over "
              << pts.size() << " endpoints\n";
    report["slice_audit"] = {{"file", o.slice_path}, {"violations", bad.size()}};
    code = bad.empty() ? 0 : 1;
  } else {
    std::vector<double> times;
    for (double t : r.times)
      if (t > 0) times.push_back(t);
    const SoundnessReport snd = soundness(F, trajs, times);
    std::cout << "soundness: " << snd.violations.size() << " violations over " << snd.checked
              << " endpoints (worst margin " << snd.worst_margin << ")\n";
    report["soundness"] = {{"checked", snd.checked},
                           {"violations", snd.violations.size()},
                           {"worst_margin", snd.worst_margin}};
    nlohmann::json cov = nlohmann::json::array();
    for (double t : times) {
      const auto pts = endpoints_at(trajs, t);
      auto os = open_out(fs::path(o.out) / ("endpoints_t" + time_tag(t) + ext(o)));
      io::write_endpoints(os, pts, format(o));
      const auto grid = bounding_grid(F, t, seed_box(r.seed), cells_for(o, r.seed.dim()));
      const auto c = coverage(F, t, pts, grid);
      nlohmann::json gaps = nlohmann::json::array();
      for (const auto& g : c.gaps) gaps.push_back(std::vector<double>(g.data(), g.data() + g.size()));
      open_out(fs::path(o.out) / ("gaps_t" + time_tag(t) + ".json")) << gaps.dump(1) << '\n';
      std::cout << "t = " << t << ": coverage " << c.coverage << " (" << c.covered_cells << " of "
                << c.inside_cells << " cells)\n";
      cov.push_back({{"t", t}, {"coverage", c.coverage}, {"inside_cells", c.inside_cells},
                     {"covered_cells", c.covered_cells}});
    }
    report["coverage"] = std::move(cov);
    code = snd.passed() ? 0 : 1;
  }
  open_out(fs::path(o.out) / "verify.json") << report.dump(2) << '\n';
  return code;
}

int cmd_examples(const Options& o) {
  for (const auto& name : io::preset_names()) {
    const io::Preset p = io::preset(name);
    std::cout << name << ": " << p.description << '\n';
    if (o.out != "parareach-out" || !o.example.empty()) {
      fs::create_directories(o.out);
      open_out(fs::path(o.out) / (name + ".json"))
          << io::system_to_json(p.system, p.seed, p.horizon) << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reachable sets of LTI systems under integral quadratic constraints"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--system", o.system_path, "System JSON file (with seed)");
    sub->add_option("--example", o.example, "Embedded preset");
    sub->add_option("--rel-tol", o.rel_tol, "Integrator relative tolerance");
    sub->add_option("--abs-tol", o.abs_tol, "Integrator absolute tolerance");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  };
  auto add_family = [&](CLI::App* sub) {
    sub->add_option("--time", o.times, "Output time (repeatable)")->take_all();
    sub->add_option("--gammas", o.gammas, "Explicit scalings, comma separated")->delimiter(',');
    sub->add_option("--members", o.members, "Number of family members");
    sub->add_option("--eps-q", o.eps_q, "Thickness of the seed boundary slab");
    sub->add_option("--cells", o.cells, "Slice grid cells per dimension (2-D)");
  };

  auto* prop = app.add_subcommand("propagate", "Propagate the seed paraboloid");
  add_common(prop);
  auto* reach = app.add_subcommand("reach", "Family intersection slices and assumption checks");
  add_common(reach);
  add_family(reach);
  auto* verify = app.add_subcommand("verify", "Oracle soundness and coverage");
  add_common(verify);
  add_family(verify);
  verify->add_option("--n", o.n, "Number of admissible oracle trajectories");
  verify->add_option("--seed", o.seed, "Oracle RNG seed");
  verify->add_option("--w-scale", o.w_scale, "Std. deviation of random disturbances");
  verify->add_option("--slice", o.slice_path, "Audit this slice CSV instead of the family");
  auto* ex = app.add_subcommand("examples", "List embedded presets (write them with --out)");
  ex->add_option("--out", o.out, "Write preset system files here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (prop->parsed()) return cmd_propagate(o);
    if (reach->parsed()) return cmd_reach(o);
    if (verify->parsed()) {
      // Endpoint margins are compared at 1e-8; the family needs a tighter
      // integration than the plotting default for that comparison to be fair.
      if (verify->get_option("--rel-tol")->count() == 0) o.rel_tol = 1e-12;
      if (verify->get_option("--abs-tol")->count() == 0) o.abs_tol = 1e-13;
      return cmd_verify(o);
    }
    if (ex->parsed()) return cmd_examples(o);
  } catch (const parareach::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
