#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "spike_crown/error.hpp"
#include "spike_crown/io.hpp"
#include "spike_crown/pipeline.hpp"

using namespace spike_crown;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("spike_crown_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

JobConfig job(const std::string& text, const fs::path& out) {
  JobConfig c = parse_job_config(text);
  c.output_dir = out.string();
  return c;
}

CommandResult run(std::string_view command, const JobConfig& c) {
  std::ostringstream log;
  return run_command(command, c, {}, log);
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("config round-trips through its canonical form") {
  const char* text = R"({"domain": {"kind": "ellipse", "a": 2.0, "b": 1.0}, "p": 4, "k": 10,
                         "epsilon_divisors": [8, 12.5], "eta": 0.01, "h_ratio": 0.125,
                         "form": "psi_numeric", "seed": 18446744073709551615})";
  const JobConfig c = parse_job_config(text);
  CHECK(c.k == std::size_t{10});
  CHECK(c.seed == 18446744073709551615ULL);
  const std::string s = serialize_job_config(c);
  const JobConfig back = parse_job_config(s);
  CHECK(back == c);
  CHECK(serialize_job_config(back) == s);
  CHECK(config_hash(back) == config_hash(c));
  JobConfig other = c;
  other.seed = 2;
  CHECK(config_hash(other) != config_hash(c));

  const JobConfig spline = parse_job_config(R"({"domain": {"kind": "spline", "points": [[1, 0], [0, 1], [-1, 0], [0, -1]]}})");
  CHECK(parse_job_config(serialize_job_config(spline)) == spline);
}

TEST_CASE("config errors") {
  CHECK(kind_of([] { parse_job_config("{"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_job_config(R"({"domain": {"kind": "circle", "radius": 1}, "bogus": 1})"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_job_config(R"({"domain": {"kind": "square"}})"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_job_config(R"({"domain": {"kind": "circle", "radius": 1}, "k": 7})"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_job_config(R"({"domain": {"kind": "circle", "radius": 1}, "h_ratio": 0.5})"); }) ==
        ErrorKind::config);
  CHECK(kind_of([] {
          parse_job_config(R"({"domain": {"kind": "circle", "radius": 1}, "epsilon": [0.1], "epsilon_divisors": [8]})");
        }) == ErrorKind::config);
  CHECK(kind_of([] { parse_job_config(R"({"domain": {"kind": "circle", "radius": 1}, "epsilon": [-0.1]})"); }) ==
        ErrorKind::config);
}

TEST_CASE("csv and hashing helpers") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hex64(255) == "00000000000000ff");

  CsvTable t({"a", "b"});
  t.add_row({0.1, 1.0 / 3.0});
  const CsvData d = parse_csv(t.str());
  REQUIRE(d.rows.size() == 1);
  CHECK(d.rows[0][0] == 0.1);
  CHECK(d.rows[0][1] == 1.0 / 3.0);
  CHECK(kind_of([] { parse_csv("a,b\n1\n"); }) == ErrorKind::io);
  CHECK(kind_of([] { parse_csv("a\nx\n"); }) == ErrorKind::io);
  CHECK(kind_of([&] { t.add_row({1.0}); }) == ErrorKind::io);

  const fs::path dir = scratch("atomic");
  write_atomic(dir / "nested" / "f.txt", "hello");
  CHECK(read_text(dir / "nested" / "f.txt") == "hello");
  CHECK_FALSE(fs::exists(dir / "nested" / "f.txt.tmp"));
}

TEST_CASE("worker count honours the environment cap") {
  setenv("SPIKE_CROWN_THREADS", "3", 1);
  CHECK(worker_count(10) == 3);
  CHECK(worker_count(2) == 2);
  setenv("SPIKE_CROWN_THREADS", "junk", 1);
  CHECK(worker_count(1) == 1);
  unsetenv("SPIKE_CROWN_THREADS");
  CHECK(worker_count(0) == 1);
}

TEST_CASE("ground-state command: closed form, reload and hypothesis failure") {
  const fs::path dir = scratch("ground");
  const CommandResult one = run("ground-state", job(R"({"domain": {"kind": "circle", "radius": 1}, "p": 3, "N": 1})", dir / "n1"));
  CHECK(one.exit_code == ExitCode::pass);
  CHECK(one.summary.at("w0").get<double>() == doctest::Approx(1.5).epsilon(1e-9));

  const JobConfig c = job(R"({"domain": {"kind": "circle", "radius": 1}, "p": 4, "N": 2})", dir / "n2");
  REQUIRE(run("ground-state", c).exit_code == ExitCode::pass);
  REQUIRE(fs::exists(dir / "n2" / "profile.csv"));
  const Json header = Json::parse(read_text(dir / "n2" / "profile.json"));
  CHECK(header.at("config_hash").get<std::string>() == config_hash(c));
  CHECK(header.at("version").get<std::string>() == kToolkitVersion);
  const RadialProfile direct = shoot(Nonlinearity(4.0, 2));
  const RadialProfile loaded = profile_from(header, read_text(dir / "n2" / "profile.csv"));
  CHECK(profile_csv(loaded) == profile_csv(direct));
  for (double r : {0.0, 0.37, 3.3, 11.9, 12.5, 30.0}) {
    CHECK(loaded.eval_w(r) == direct.eval_w(r));
    CHECK(loaded.eval_w_prime(r) == direct.eval_w_prime(r));
  }

  const CommandResult bad = run("ground-state", job(R"({"domain": {"kind": "circle", "radius": 1}, "p": 1.5})", dir / "bad"));
  CHECK(bad.exit_code == ExitCode::config_error);
  const Json err = Json::parse(read_text(dir / "bad" / "error.json"));
  CHECK(err.at("kind").get<std::string>() == "precondition");
  CHECK(err.contains("hypotheses"));
}

TEST_CASE("pack command: circle closed form, ellipse chords, convexity rejection") {
  const fs::path dir = scratch("pack");
  const CommandResult circle = run("pack", job(R"({"domain": {"kind": "circle", "radius": 1}, "delta0": 0.3})", dir / "c"));
  CHECK(circle.exit_code == ExitCode::pass);
  CHECK(circle.summary.at("k").get<int>() == 12);
  const double s = std::sin(std::numbers::pi / 12);
  CHECK(circle.summary.at("delta").get<double>() == doctest::Approx(s / (1 + s)).epsilon(1e-10));
  CHECK(circle.summary.at("gap").get<double>() > 0.0);

  const CommandResult ellipse = run("pack", job(R"({"domain": {"kind": "ellipse", "a": 2, "b": 1}, "k": 10})", dir / "e"));
  CHECK(ellipse.exit_code == ExitCode::pass);
  const CsvData crown = parse_csv(read_text(dir / "e" / "crown.csv"));
  REQUIRE(crown.rows.size() == 10);
  const double delta = ellipse.summary.at("delta").get<double>();
  for (const auto& row : crown.rows) {
    CHECK(row[4] == doctest::Approx(2 * delta).epsilon(1e-8));
    CHECK(row[5] == doctest::Approx(delta).epsilon(1e-8));
  }

  const char* star = R"({"domain": {"kind": "spline", "points": [[1, 0], [0.35, 0.35], [0, 1], [-0.35, 0.35],
                         [-1, 0], [-0.35, -0.35], [0, -1], [0.35, -0.35]]}, "k": 4})";
  const CommandResult rejected = run("pack", job(star, dir / "s"));
  CHECK(rejected.exit_code == ExitCode::config_error);
  CHECK(Json::parse(read_text(dir / "s" / "error.json")).at("kind").get<std::string>() == "domain");
}

TEST_CASE("reduce command: validation, determinism and stamping") {
  const fs::path dir = scratch("reduce");
  const CommandResult coarse =
      run("reduce", job(R"({"domain": {"kind": "circle", "radius": 1}, "k": 4, "epsilon_divisors": [4]})", dir / "r"));
  CHECK(coarse.exit_code == ExitCode::config_error);
  const CommandResult no_eps = run("reduce", job(R"({"domain": {"kind": "circle", "radius": 1}, "k": 4})", dir / "r"));
  CHECK(no_eps.exit_code == ExitCode::config_error);

  const JobConfig c = job(R"({"domain": {"kind": "circle", "radius": 1}, "k": 4, "epsilon_divisors": [6, 8]})", dir / "r");
  REQUIRE(run("reduce", c).exit_code == ExitCode::pass);
  const std::string first = read_text(dir / "r" / "reduce.json");
  const std::string trace = read_text(dir / "r" / "reduce_1.csv");
  fs::remove(dir / "r" / "profile.json");
  REQUIRE(run("reduce", c).exit_code == ExitCode::pass);
  CHECK(read_text(dir / "r" / "reduce.json") == first);
  CHECK(read_text(dir / "r" / "reduce_1.csv") == trace);

  const Json summary = Json::parse(first);
  CHECK(summary.at("config_hash").get<std::string>() == config_hash(c));
  for (const auto& r : summary.at("runs")) CHECK(r.at("checks").at("location_within_5eps").get<bool>());
  CHECK(parse_csv(trace).header == std::vector<std::string>{"iter", "log_M", "grad_norm", "min_chord", "min_dist"});
}

TEST_CASE("unknown command and dimension checks") {
  const fs::path dir = scratch("misc");
  CHECK(run("frobnicate", job(R"({"domain": {"kind": "circle", "radius": 1}})", dir)).exit_code == ExitCode::config_error);
  CHECK(run("pack", job(R"({"domain": {"kind": "circle", "radius": 1}, "N": 1, "k": 4})", dir)).exit_code ==
        ExitCode::config_error);
  CHECK(run("pack", job(R"({"domain": {"kind": "circle", "radius": 1}})", dir)).exit_code == ExitCode::config_error);
}
