#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spike_crown/ground_state.hpp"
#include "spike_crown/packing.hpp"
#include "spike_crown/reduced_energy.hpp"

namespace spike_crown {

using Json = nlohmann::json;

inline constexpr std::string_view kToolkitVersion = "1.0.0";

/// 17 significant digits, the round-trip precision of a double.
std::string format_double(double v);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Writes to a sibling temporary and renames it over `path`, creating parent
/// directories. Throws Error(io).
void write_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_text(const std::filesystem::path& path);

/// Pretty JSON with a trailing newline.
std::string dump_json(const Json& j);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  void add_row(std::initializer_list<double> values);
  void add_row(const std::vector<double>& values);
  std::size_t rows() const noexcept { return rows_.size(); }
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::string> rows_;
};

/// Numeric CSV with one header line. Throws Error(io) on malformed input.
struct CsvData {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
CsvData parse_csv(std::string_view text);

/// Columns r, w, w_prime.
std::string profile_csv(const RadialProfile& profile);
/// p, N, w0, A, r_tail, h_r.
Json profile_header(const RadialProfile& profile);
/// Rebuilds the profile from its header and table; bit-exact for files
/// produced by profile_csv / profile_header.
RadialProfile profile_from(const Json& header, std::string_view csv);

/// Columns i, x_i, y_i, sign, chord_to_next, d_boundary.
std::string crown_csv(const PlanarDomain& dom, const SpikeConfiguration& config);

/// Columns iter, log_M, grad_norm, min_chord, min_dist.
std::string trace_csv(const MinimizeResult& result);

Json points_json(const SpikeConfiguration& config);
SpikeConfiguration points_from(const Json& j);

}  // namespace spike_crown
