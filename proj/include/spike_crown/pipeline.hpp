#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "spike_crown/geometry.hpp"
#include "spike_crown/io.hpp"
#include "spike_crown/reduced_energy.hpp"

namespace spike_crown {

/// {"kind": "circle", "radius": R, "center": [x, y]}, {"kind": "ellipse", "a", "b"},
/// {"kind": "superellipse", "a", "b", "m"}, {"kind": "spline", "points": [[x, y], ...]}
/// or {"kind": "spline", "points_csv": "file.csv"} with columns x, y.
struct DomainSpec {
  CurveKind kind = CurveKind::circle;
  double radius = 1.0;
  Vec2 center;
  double a = 1.0;
  double b = 1.0;
  double m = 4.0;
  std::vector<Vec2> control_points;
  std::string points_csv;
  bool operator==(const DomainSpec&) const = default;
};

struct JobConfig {
  DomainSpec domain;
  double p = 3.0;
  int dimension = 2;
  /// Absolute values of eps, or divisors d giving eps = delta* / d; one of the
  /// two may be non-empty.
  std::vector<double> epsilon;
  std::vector<double> epsilon_divisors;
  std::optional<double> delta0;    ///< selects k when k is absent
  std::optional<std::size_t> k;
  std::optional<double> eta;       ///< default delta* / 10
  double h_ratio = 0.25;           ///< grid spacing h = h_ratio * eps
  EnergyForm form = EnergyForm::leading;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  /// Directory against which points_csv resolves; not serialized.
  std::filesystem::path base_dir;

  bool operator==(const JobConfig& o) const;
};

/// Throws Error(config) on unknown keys, wrong types or missing fields.
JobConfig parse_job_config(std::string_view text, const std::filesystem::path& base_dir = {});
JobConfig load_job_config(const std::filesystem::path& path);
Json to_json(const JobConfig& config);
/// Canonical compact form; parse(serialize(c)) == c.
std::string serialize_job_config(const JobConfig& config);
/// FNV-1a of the canonical form, as 16 hex digits.
std::string config_hash(const JobConfig& config);

/// Throws Error(domain) for a non-convex spline.
PlanarDomain build_domain(const DomainSpec& spec, const std::filesystem::path& base_dir = {});

enum class ExitCode : int { pass = 0, criterion_failure = 1, config_error = 2, numerical_failure = 3 };

/// min(SPIKE_CROWN_THREADS or the hardware concurrency, jobs), at least 1.
std::size_t worker_count(std::size_t jobs);

struct RunOptions {
  /// Solve the eps list from largest to smallest, starting each solve from
  /// the previous solution's centres.
  bool continuation = false;
};

struct CommandResult {
  ExitCode exit_code = ExitCode::pass;
  Json summary;
};

/// Runs ground-state, pack, reduce, solve or verify, writing artifacts under
/// config.output_dir. Errors become error.json (verdict.json for verify) and
/// the matching exit code; progress goes to `log`.
CommandResult run_command(std::string_view command, const JobConfig& config, const RunOptions& options,
                          std::ostream& log);

}  // namespace spike_crown
