#include "spike_crown/io.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "spike_crown/error.hpp"

namespace spike_crown {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_atomic(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) fail(ErrorKind::io, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) fail(ErrorKind::io, "write to " + tmp.string() + " failed");
  }
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(std::initializer_list<double> values) { add_row(std::vector<double>(values)); }

void CsvTable::add_row(const std::vector<double>& values) {
  if (values.size() != header_.size()) fail(ErrorKind::io, "csv row width does not match the header");
  std::string row;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) row += ',';
    row += format_double(values[i]);
  }
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (i) out += ',';
    out += header_[i];
  }
  out += '\n';
  for (const auto& r : rows_) out += r + '\n';
  return out;
}

CsvData parse_csv(std::string_view text) {
  CsvData data;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t end = text.find('\n');
    std::string_view line = text.substr(0, end);
    text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    for (std::size_t pos = 0;;) {
      const std::size_t comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (data.header.empty()) {
      for (auto c : cells) data.header.emplace_back(c);
      continue;
    }
    if (cells.size() != data.header.size())
      fail(ErrorKind::io, "csv line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) + " cells");
    std::vector<double> row;
    for (auto c : cells) {
      const std::string cell(c);
      char* stop = nullptr;
      errno = 0;
      const double v = std::strtod(cell.c_str(), &stop);
      if (cell.empty() || *stop != '\0' || errno == ERANGE)
        fail(ErrorKind::io, "csv line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      row.push_back(v);
    }
    data.rows.push_back(std::move(row));
  }
  if (data.header.empty()) fail(ErrorKind::io, "empty csv");
  return data;
}

std::string profile_csv(const RadialProfile& profile) {
  CsvTable t({"r", "w", "w_prime"});
  const auto w = profile.w_values();
  const auto wp = profile.w_prime_values();
  for (std::size_t i = 0; i < profile.size(); ++i) t.add_row({profile.r_at(i), w[i], wp[i]});
  return t.str();
}

Json profile_header(const RadialProfile& profile) {
  return Json{{"p", profile.p()},         {"N", profile.dimension_n()},  {"w0", profile.w0()},
              {"A", profile.decay_A()},   {"r_tail", profile.r_tail()},  {"h_r", profile.h_r()}};
}

RadialProfile profile_from(const Json& header, std::string_view csv) {
  try {
    const CsvData d = parse_csv(csv);
    if (d.header != std::vector<std::string>{"r", "w", "w_prime"}) fail(ErrorKind::io, "profile csv needs columns r,w,w_prime");
    std::vector<double> w, wp;
    for (const auto& row : d.rows) {
      w.push_back(row[1]);
      wp.push_back(row[2]);
    }
    return RadialProfile(header.at("p").get<double>(), header.at("N").get<int>(), header.at("h_r").get<double>(),
                         std::move(w), std::move(wp), header.at("w0").get<double>(), header.at("A").get<double>(),
                         header.at("r_tail").get<double>());
  } catch (const Json::exception& e) {
    fail(ErrorKind::io, std::string("profile header: ") + e.what());
  }
}

std::string crown_csv(const PlanarDomain& dom, const SpikeConfiguration& config) {
  CsvTable t({"i", "x", "y", "sign", "chord_to_next", "d_boundary"});
  const std::size_t k = config.k();
  for (std::size_t i = 0; i < k; ++i) {
    const Vec2 p = config.points[i];
    t.add_row({static_cast<double>(i), p.x, p.y, static_cast<double>(SpikeConfiguration::sign(i)),
               distance(p, config.points[(i + 1) % k]), -signed_distance(dom, p)});
  }
  return t.str();
}

std::string trace_csv(const MinimizeResult& result) {
  CsvTable t({"iter", "log_M", "grad_norm", "min_chord", "min_dist"});
  for (const auto& r : result.trace)
    t.add_row({static_cast<double>(r.iteration), r.log_M, r.grad_norm, r.min_chord, r.min_depth});
  return t.str();
}

Json points_json(const SpikeConfiguration& config) {
  Json a = Json::array();
  for (const Vec2& p : config.points) a.push_back({p.x, p.y});
  return a;
}

SpikeConfiguration points_from(const Json& j) {
  SpikeConfiguration c;
  try {
    for (const auto& p : j) c.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  } catch (const Json::exception& e) {
    fail(ErrorKind::config, std::string("points: ") + e.what());
  }
  return c;
}

}  // namespace spike_crown
