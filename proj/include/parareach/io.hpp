#pragma once

// File formats and embedded presets (double precision).

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "parareach/family.hpp"
#include "parareach/model.hpp"
#include "parareach/oracle.hpp"
#include "parareach/riccati_flow.hpp"
#include "parareach/touching.hpp"

namespace parareach::io {

/// A system together with the optional seed and horizon stored in the same
/// file.
struct SystemFile {
  IqcSystem<double> system;
  std::optional<Paraboloid<double>> seed;
  std::optional<double> horizon;
};

/// Schema:
///   {"A": [[...]], "B": [[...]], "Bu": [[...]] (optional, may be []),
///    "M": [[...]]  (order x, u, w),
///    "u": "zero" | {"times": [...], "values": [[...], ...]},
///    "seed": {"E": [[...]], "f": [...], "g": number}  (optional),
///    "horizon": number (optional)}
SystemFile parse_system_json(const std::string& text);
SystemFile load_system_file(const std::string& path);
std::string system_to_json(const IqcSystem<double>& sys,
                           const std::optional<Paraboloid<double>>& seed = std::nullopt,
                           std::optional<double> horizon = std::nullopt);

struct Preset {
  std::string name;
  std::string description;
  IqcSystem<double> system;
  Paraboloid<double> seed;
  double horizon = 1;
  std::vector<double> times;   // default output times
  std::vector<double> gammas;  // explicit family scalings, if any
  int members = 16;
  GammaSpacing spacing = GammaSpacing::uniform;
};

std::vector<std::string> preset_names();
/// Throws ConfigError for unknown names. "ex1" is an alias of "ex1-family".
Preset preset(const std::string& name);

enum class Format { csv, json };

void write_tvp(std::ostream& os, const TimeVaryingParaboloid<double>& P, Format fmt);
void write_trajectory(std::ostream& os, const AugmentedTrajectory<double>& traj, Format fmt);
void write_slice(std::ostream& os, const ReachSlice<double>& s, Format fmt);
void write_endpoints(std::ostream& os, const std::vector<AugmentedState<double>>& pts,
                     Format fmt);

/// Slice as read back from a CSV file: points and their xq_max.
struct SliceTable {
  std::vector<Eigen::VectorXd> x;
  std::vector<double> xq_max;
};
SliceTable read_slice_csv(std::istream& is);

struct AuditViolation {
  std::size_t endpoint = 0;
  double xq = 0;
  double bound = 0;
};

/// Checks endpoints against a slice sampled on a regular grid: x_q may not
/// exceed the largest xq_max at the corners of the enclosing grid cell plus
/// the spread of those corners. Endpoints outside the grid are violations.
std::vector<AuditViolation> audit_slice(const SliceTable& slice,
                                        const std::vector<AugmentedState<double>>& endpoints,
                                        double tol = 1e-8);

std::string manifest_json(const ParaboloidFamily<double>& F, const AssumptionReport* report);
std::string tvp_manifest_json(const TimeVaryingParaboloid<double>& P, double horizon);

}  // namespace parareach::io
