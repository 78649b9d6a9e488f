#include "parareach/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace parareach::io {

using nlohmann::json;

namespace {

Eigen::MatrixXd matrix_from_json(const json& j, const char* name) {
  if (!j.is_array()) throw ConfigError(std::string(name) + " must be a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  if (!j[0].is_array()) throw ConfigError(std::string(name) + " must be a nested array");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw DimensionMismatch(std::string(name) + ": ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw ConfigError(std::string(name) + ": entries must be numbers");
      M(i, c) = v.get<double>();
    }
  }
  return M;
}

Eigen::VectorXd vector_from_json(const json& j, const char* name) {
  if (!j.is_array()) throw ConfigError(std::string(name) + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(std::string(name) + ": entries must be numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json matrix_to_json(const Eigen::MatrixXd& M) {
  json out = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(i, c));
    out.push_back(std::move(row));
  }
  return out;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

SystemFile parse_system_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid system JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("system JSON must be an object");
  for (const char* key : {"A", "B", "M"})
    if (!j.contains(key)) throw ConfigError(std::string("system JSON lacks field \"") + key + "\"");

  const Eigen::MatrixXd A = matrix_from_json(j["A"], "A");
  const Eigen::MatrixXd B = matrix_from_json(j["B"], "B");
  Eigen::MatrixXd Bu = j.contains("Bu") ? matrix_from_json(j["Bu"], "Bu") : Eigen::MatrixXd();
  if (Bu.size() == 0) Bu.resize(A.rows(), 0);
  const Eigen::MatrixXd M = matrix_from_json(j["M"], "M");

  InputSignal<double> u = InputSignal<double>::zero(Bu.cols());
  if (j.contains("u")) {
    const json& ju = j["u"];
    if (ju.is_string()) {
      if (ju.get<std::string>() != "zero") throw ConfigError("u must be \"zero\" or an object");
    } else if (ju.is_object()) {
      if (!ju.contains("times") || !ju.contains("values"))
        throw ConfigError("u needs \"times\" and \"values\"");
      const Eigen::VectorXd times = vector_from_json(ju["times"], "u.times");
      const Eigen::MatrixXd values = matrix_from_json(ju["values"], "u.values");
      if (values.rows() != times.size())
        throw DimensionMismatch("u.values needs one row per time");
      std::vector<double> ts(times.data(), times.data() + times.size());
      std::vector<Eigen::VectorXd> vs;
      for (Eigen::Index k = 0; k < values.rows(); ++k) vs.push_back(values.row(k).transpose());
      u = InputSignal<double>::sampled(std::move(ts), std::move(vs));
    } else {
      throw ConfigError("u must be \"zero\" or an object");
    }
  }

  SystemFile out{make_system(A, B, Bu, M, std::move(u)), std::nullopt, std::nullopt};
  if (j.contains("seed")) {
    const json& s = j["seed"];
    if (!s.is_object() || !s.contains("E") || !s.contains("f") || !s.contains("g") ||
        !s["g"].is_number())
      throw ConfigError("seed needs \"E\", \"f\" and a numeric \"g\"");
    out.seed = make_paraboloid(matrix_from_json(s["E"], "seed.E"),
                               vector_from_json(s["f"], "seed.f"), s["g"].get<double>());
    if (out.seed->dim() != out.system.n())
      throw DimensionMismatch("seed dimension differs from the system");
  }
  if (j.contains("horizon")) {
    if (!j["horizon"].is_number()) throw ConfigError("horizon must be a number");
    out.horizon = j["horizon"].get<double>();
    if (!(*out.horizon > 0)) throw ConfigError("horizon must be positive");
  }
  return out;
}

SystemFile load_system_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open system file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_system_json(ss.str());
}

std::string system_to_json(const IqcSystem<double>& sys,
                           const std::optional<Paraboloid<double>>& seed,
                           std::optional<double> horizon) {
  json j;
  j["A"] = matrix_to_json(sys.A());
  j["B"] = matrix_to_json(sys.B());
  j["Bu"] = matrix_to_json(sys.Bu());
  j["M"] = matrix_to_json(sys.M());
  if (sys.u().is_zero()) {
    j["u"] = "zero";
  } else {
    json ju;
    ju["times"] = sys.u().times();
    json values = json::array();
    for (const auto& v : sys.u().values()) values.push_back(vector_to_json(v));
    ju["values"] = std::move(values);
    j["u"] = std::move(ju);
  }
  if (seed) j["seed"] = {{"E", matrix_to_json(seed->E)}, {"f", vector_to_json(seed->f)}, {"g", seed->g}};
  if (horizon) j["horizon"] = *horizon;
  return j.dump(2);
}

namespace {

Preset ex1_base(std::string name, std::string description, double E0, double g0, double T) {
  Eigen::MatrixXd A(1, 1), B(1, 1), Bu = Eigen::MatrixXd::Zero(1, 1);
  A << -1;
  B << 1;
  const Eigen::MatrixXd M = Eigen::Vector3d(1, 1, -2).asDiagonal();
  Preset p;
  p.name = std::move(name);
  p.description = std::move(description);
  p.system = make_system(A, B, Bu, M, InputSignal<double>::zero(1));
  p.seed = make_paraboloid<double>(Eigen::MatrixXd::Constant(1, 1, E0), Eigen::VectorXd::Zero(1), g0);
  p.horizon = T;
  return p;
}

Preset sec5() {
  const Eigen::MatrixXd A = -Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd B = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd Bu = Eigen::MatrixXd::Zero(2, 1);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(5, 5);
  M.diagonal() << 1, 1, 1, -2, -2;
  const double a = 1e-2, b = 1e-6;
  Eigen::MatrixXd E0(2, 2);
  E0 << a + b, a, a, a + b;
  Preset p;
  p.name = "sec5";
  p.description = "2-D system A=-I, B=I, M=diag(I,1,-2I); seed E0=[[a+b,a],[a,a+b]], "
                  "a=1e-2, b=1e-6, g0=-0.015; T=1";
  p.system = make_system(A, B, Bu, M, InputSignal<double>::zero(1));
  p.seed = make_paraboloid<double>(E0, Eigen::VectorXd::Zero(2), -0.015);
  p.horizon = 1.0;
  p.times = {0.25, 0.5, 0.794, 1.0};
  p.members = 64;
  p.spacing = GammaSpacing::geometric;
  return p;
}

}  // namespace

std::vector<std::string> preset_names() { return {"ex1-stable", "ex1-escape", "ex1-family", "sec5"}; }

Preset preset(const std::string& name) {
  if (name == "ex1-stable") {
    Preset p = ex1_base(name, "1-D system A=-1, B=1, M=diag(1,1,-2); seed E0=1, f0=0, g0=-0.06; T=10",
                        1.0, -0.06, 10.0);
    p.times = {1.0, 5.0, 10.0};
    return p;
  }
  if (name == "ex1-escape") {
    Preset p = ex1_base(name, "1-D system A=-1, B=1, M=diag(1,1,-2); seed E0=0.5, f0=0, g0=-0.03; T=3",
                        0.5, -0.03, 3.0);
    p.times = {0.91, 1.62};
    return p;
  }
  if (name == "ex1-family" || name == "ex1") {
    Preset p = ex1_base("ex1-family",
                        "escape seed of ex1-escape with scalings {1, 1.6, 2.2, 2.7, 3.3}; T=2",
                        0.5, -0.03, 2.0);
    p.times = {0.0, 0.91, 1.62};
    p.gammas = {1.0, 1.6, 2.2, 2.7, 3.3};
    p.members = 5;
    return p;
  }
  if (name == "sec5") return sec5();
  throw ConfigError("unknown example '" + name + "'");
}

void write_tvp(std::ostream& os, const TimeVaryingParaboloid<double>& P, Format fmt) {
  const auto n = P.n();
  if (fmt == Format::json) {
    json rows = json::array();
    for (std::size_t k = 0; k < P.size(); ++k)
      rows.push_back({{"t", P.grid()[k]}, {"E", matrix_to_json(P.E(k))},
                      {"f", vector_to_json(P.f(k))}, {"g", P.g(k)}});
    json j = {{"gamma", P.gamma()}, {"escape_time", optional_number(P.escape_time())},
              {"samples", std::move(rows)}};
    os << j.dump(2) << '\n';
    return;
  }
  os << 't';
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) os << ",E_" << i << '_' << j;
  for (Eigen::Index i = 0; i < n; ++i) os << ",f_" << i;
  os << ",g\n";
  for (std::size_t k = 0; k < P.size(); ++k) {
    const Eigen::MatrixXd E = P.E(k);
    const Eigen::VectorXd f = P.f(k);
    os << num(P.grid()[k]);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) os << ',' << num(E(i, j));
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << num(f[i]);
    os << ',' << num(P.g(k)) << '\n';
  }
}

void write_trajectory(std::ostream& os, const AugmentedTrajectory<double>& traj, Format fmt) {
  const bool has_h = traj.h_samples.size() == traj.size();
  if (fmt == Format::json) {
    json rows = json::array();
    for (std::size_t k = 0; k < traj.size(); ++k) {
      json r = {{"t", traj.grid[k]}, {"x", vector_to_json(traj.x_samples[k])},
                {"x_q", traj.xq_samples[k]}, {"w", vector_to_json(traj.w_samples[k])}};
      r["h"] = has_h ? json(traj.h_samples[k]) : json(nullptr);
      rows.push_back(std::move(r));
    }
    os << rows.dump(2) << '\n';
    return;
  }
  if (traj.size() == 0) return;
  const auto n = traj.x_samples[0].size(), m = traj.w_samples[0].size();
  os << 't';
  for (Eigen::Index i = 0; i < n; ++i) os << ",x_" << i;
  os << ",x_q";
  for (Eigen::Index i = 0; i < m; ++i) os << ",w_" << i;
  os << ",h\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    os << num(traj.grid[k]);
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << num(traj.x_samples[k][i]);
    os << ',' << num(traj.xq_samples[k]);
    for (Eigen::Index i = 0; i < m; ++i) os << ',' << num(traj.w_samples[k][i]);
    os << ',' << (has_h ? num(traj.h_samples[k]) : std::string("nan")) << '\n';
  }
}

void write_slice(std::ostream& os, const ReachSlice<double>& s, Format fmt) {
  if (fmt == Format::json) {
    json rows = json::array();
    for (std::size_t k = 0; k < s.size(); ++k)
      rows.push_back({{"x", vector_to_json(s.x_grid[k])}, {"xq_max", s.xq_max[k]},
                      {"argmin_gamma", s.argmin_gamma[k]}});
    os << json{{"t", s.t}, {"points", std::move(rows)}}.dump(2) << '\n';
    return;
  }
  if (s.size() == 0) return;
  const auto n = s.x_grid[0].size();
  for (Eigen::Index i = 0; i < n; ++i) os << "x_" << i << ',';
  os << "xq_max,argmin_gamma\n";
  for (std::size_t k = 0; k < s.size(); ++k) {
    for (Eigen::Index i = 0; i < n; ++i) os << num(s.x_grid[k][i]) << ',';
    os << num(s.xq_max[k]) << ',' << num(s.argmin_gamma[k]) << '\n';
  }
}

void write_endpoints(std::ostream& os, const std::vector<AugmentedState<double>>& pts,
                     Format fmt) {
  if (fmt == Format::json) {
    json rows = json::array();
    for (const auto& X : pts) rows.push_back({{"x", vector_to_json(X.x)}, {"x_q", X.xq}});
    os << rows.dump(2) << '\n';
    return;
  }
  if (pts.empty()) return;
  const auto n = pts[0].x.size();
  for (Eigen::Index i = 0; i < n; ++i) os << "x_" << i << ',';
  os << "x_q\n";
  for (const auto& X : pts) {
    for (Eigen::Index i = 0; i < n; ++i) os << num(X.x[i]) << ',';
    os << num(X.xq) << '\n';
  }
}

SliceTable read_slice_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("slice file is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const auto col = std::find(header.begin(), header.end(), "xq_max");
  if (col == header.end()) throw ConfigError("slice file lacks an xq_max column");
  const auto n = static_cast<Eigen::Index>(col - header.begin());
  if (n == 0) throw ConfigError("slice file has no x columns");
  SliceTable out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ConfigError("slice file: bad number on line " + std::to_string(row));
      }
    }
    if (static_cast<Eigen::Index>(vals.size()) <= n)
      throw ConfigError("slice file: short line " + std::to_string(row));
    out.x.push_back(Eigen::Map<const Eigen::VectorXd>(vals.data(), n));
    out.xq_max.push_back(vals[static_cast<std::size_t>(n)]);
  }
  if (out.x.empty()) throw ConfigError("slice file has no rows");
  return out;
}

std::vector<AuditViolation> audit_slice(const SliceTable& slice,
                                        const std::vector<AugmentedState<double>>& endpoints,
                                        double tol) {
  const auto n = slice.x.front().size();
  // Recover the tensor grid from the distinct coordinates per axis.
  std::vector<std::vector<double>> axes(static_cast<std::size_t>(n));
  for (Eigen::Index d = 0; d < n; ++d) {
    auto& ax = axes[static_cast<std::size_t>(d)];
    for (const auto& x : slice.x) ax.push_back(x[d]);
    std::sort(ax.begin(), ax.end());
    ax.erase(std::unique(ax.begin(), ax.end()), ax.end());
  }
  std::size_t total = 1;
  for (const auto& ax : axes) total *= ax.size();
  if (total != slice.x.size()) throw ConfigError("slice points do not form a regular grid");
  std::vector<double> table(total, 0);
  auto flat = [&](const std::vector<std::size_t>& idx) {
    std::size_t f = 0, stride = 1;
    for (std::size_t d = 0; d < idx.size(); ++d) {
      f += idx[d] * stride;
      stride *= axes[d].size();
    }
    return f;
  };
  for (std::size_t k = 0; k < slice.x.size(); ++k) {
    std::vector<std::size_t> idx(axes.size());
    for (std::size_t d = 0; d < axes.size(); ++d)
      idx[d] = static_cast<std::size_t>(
          std::lower_bound(axes[d].begin(), axes[d].end(), slice.x[k][Eigen::Index(d)]) -
          axes[d].begin());
    table[flat(idx)] = slice.xq_max[k];
  }

  std::vector<AuditViolation> out;
  for (std::size_t e = 0; e < endpoints.size(); ++e) {
    const auto& X = endpoints[e];
    std::vector<std::size_t> lo(axes.size());
    bool inside = true;
    for (std::size_t d = 0; d < axes.size() && inside; ++d) {
      const auto& ax = axes[d];
      const double v = X.x[Eigen::Index(d)];
      if (v < ax.front() || v > ax.back()) {
        inside = false;
        break;
      }
      const auto it = std::upper_bound(ax.begin(), ax.end(), v);
      std::size_t i = static_cast<std::size_t>(it - ax.begin());
      lo[d] = i == 0 ? 0 : std::min(i - 1, ax.size() >= 2 ? ax.size() - 2 : 0);
    }
    if (!inside) {
      out.push_back({e, X.xq, -std::numeric_limits<double>::infinity()});
      continue;
    }
    double hi = -std::numeric_limits<double>::infinity();
    double low = std::numeric_limits<double>::infinity();
    const std::size_t corners = std::size_t(1) << axes.size();
    for (std::size_t c = 0; c < corners; ++c) {
      std::vector<std::size_t> idx(lo);
      for (std::size_t d = 0; d < axes.size(); ++d)
        if ((c >> d) & 1) idx[d] = std::min(idx[d] + 1, axes[d].size() - 1);
      const double v = table[flat(idx)];
      hi = std::max(hi, v);
      low = std::min(low, v);
    }
    const double bound = hi + (hi - low);
    if (X.xq > bound + tol) out.push_back({e, X.xq, bound});
  }
  return out;
}

std::string manifest_json(const ParaboloidFamily<double>& F, const AssumptionReport* report) {
  json members = json::array();
  for (const auto& m : F.members)
    members.push_back({{"gamma", m.gamma()},
                       {"escape_time", optional_number(m.escape_time())},
                       {"end_time", m.end_time()},
                       {"max_E_norm", m.max_E_norm()}});
  json j = {{"gammas", F.gammas},       {"gamma_bar", F.gamma_bar},
            {"eps_q", F.eps_q},         {"horizon", F.horizon},
            {"K_bound", F.K_bound},     {"escape_norm", F.escape_norm},
            {"members", std::move(members)}};
  if (report) {
    json viol = json::array();
    for (const auto& v : report->violations)
      viol.push_back({{"gamma", v.gamma}, {"launch", v.launch}, {"t", v.t}, {"x_q", v.xq},
                      {"x_q_rate", v.xq_rate}});
    j["assumptions"] = {{"bounded_riccati", report->bounded},
                        {"K_bound", report->K_bound},
                        {"escaped_gammas", report->escaped_gammas},
                        {"falling_energy", report->falling_energy},
                        {"trajectories_checked", report->trajectories_checked},
                        {"violations", std::move(viol)},
                        {"passed", report->passed()}};
  }
  return j.dump(2);
}

std::string tvp_manifest_json(const TimeVaryingParaboloid<double>& P, double horizon) {
  const std::size_t last = P.size() - 1;
  json j = {{"gamma", P.gamma()},
            {"horizon", horizon},
            {"end_time", P.end_time()},
            {"escape_time", optional_number(P.escape_time())},
            {"grid_points", P.size()},
            {"max_E_norm", P.max_E_norm()},
            {"final", {{"t", P.grid()[last]},
                       {"E", matrix_to_json(P.E(last))},
                       {"f", vector_to_json(P.f(last))},
                       {"g", P.g(last)}}}};
  return j.dump(2);
}

}  // namespace parareach::io
