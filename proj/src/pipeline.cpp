#include "spike_crown/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numbers>
#include <set>
#include <thread>

#include "spike_crown/error.hpp"
#include "spike_crown/pde.hpp"

namespace spike_crown {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& message) { fail(ErrorKind::config, message); }

template <class T>
T get_as(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    config_error(std::string("config field '") + key + "' is missing or has the wrong type");
  }
}

void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) config_error(std::string(where) + " must be a JSON object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!keys.contains(key)) config_error(std::string("unknown key '") + key + "' in " + where);
}

std::vector<Vec2> parse_points(const Json& j) {
  std::vector<Vec2> pts;
  try {
    for (const auto& p : j) {
      if (p.size() != 2) config_error("points must be [x, y] pairs");
      pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
  } catch (const Json::exception&) {
    config_error("points must be [x, y] pairs of numbers");
  }
  return pts;
}

DomainSpec parse_domain(const Json& j) {
  if (!j.is_object()) config_error("domain must be a JSON object");
  DomainSpec d;
  const auto kind = get_as<std::string>(j, "kind");
  if (kind == "circle") {
    reject_unknown(j, {"kind", "radius", "center"}, "domain");
    d.kind = CurveKind::circle;
    d.radius = get_as<double>(j, "radius");
    if (j.contains("center")) {
      const auto c = parse_points(Json::array({j.at("center")}));
      d.center = c.front();
    }
  } else if (kind == "ellipse") {
    reject_unknown(j, {"kind", "a", "b"}, "domain");
    d.kind = CurveKind::ellipse;
    d.a = get_as<double>(j, "a");
    d.b = get_as<double>(j, "b");
  } else if (kind == "superellipse") {
    reject_unknown(j, {"kind", "a", "b", "m"}, "domain");
    d.kind = CurveKind::superellipse;
    d.a = get_as<double>(j, "a");
    d.b = get_as<double>(j, "b");
    d.m = get_as<double>(j, "m");
  } else if (kind == "spline") {
    reject_unknown(j, {"kind", "points", "points_csv"}, "domain");
    d.kind = CurveKind::spline;
    if (j.contains("points") == j.contains("points_csv")) config_error("spline domain needs exactly one of points, points_csv");
    if (j.contains("points")) d.control_points = parse_points(j.at("points"));
    else d.points_csv = get_as<std::string>(j, "points_csv");
  } else {
    config_error("unknown domain kind '" + kind + "'");
  }
  return d;
}

Json domain_json(const DomainSpec& d) {
  switch (d.kind) {
    case CurveKind::circle: return {{"kind", "circle"}, {"radius", d.radius}, {"center", {d.center.x, d.center.y}}};
    case CurveKind::ellipse: return {{"kind", "ellipse"}, {"a", d.a}, {"b", d.b}};
    case CurveKind::superellipse: return {{"kind", "superellipse"}, {"a", d.a}, {"b", d.b}, {"m", d.m}};
    default: break;
  }
  Json j{{"kind", "spline"}};
  if (!d.points_csv.empty()) {
    j["points_csv"] = d.points_csv;
  } else {
    Json pts = Json::array();
    for (const Vec2& p : d.control_points) pts.push_back({p.x, p.y});
    j["points"] = pts;
  }
  return j;
}

std::vector<double> positive_list(const Json& j, const char* key) {
  std::vector<double> v;
  if (!j.contains(key)) return v;
  v = get_as<std::vector<double>>(j, key);
  for (double x : v)
    if (!(x > 0.0) || !std::isfinite(x)) config_error(std::string(key) + " entries must be positive and finite");
  return v;
}

// ---------------------------------------------------------------------------
// Jobs and stages

struct Job {
  JobConfig config;
  fs::path out;
  std::string hash;
  Nonlinearity nl;
  PlanarDomain dom;
  std::ostream* log;
  std::mutex* log_mutex;

  template <class... Args>
  void say(const Args&... parts) const {
    std::lock_guard lock(*log_mutex);
    ((*log) << ... << parts) << '\n';
  }
};

Json stamped(const Job& job, Json body) {
  body["config_hash"] = job.hash;
  body["version"] = std::string(kToolkitVersion);
  return body;
}

template <class F>
void parallel_for(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = worker_count(n);
  if (workers <= 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

RadialProfile profile_stage(const Job& job) {
  const fs::path json_path = job.out / "profile.json", csv_path = job.out / "profile.csv";
  if (fs::exists(json_path) && fs::exists(csv_path)) {
    try {
      const Json header = Json::parse(read_text(json_path));
      if (header.at("p").get<double>() == job.config.p && header.at("N").get<int>() == job.config.dimension) {
        job.say("profile: reloaded ", csv_path.string());
        return profile_from(header, read_text(csv_path));
      }
    } catch (const Json::exception&) {
    }
  }
  const RadialProfile profile = shoot(job.nl);
  const NormalizationConstants c = normalization_constants(profile);
  Json header = profile_header(profile);
  header["e1"] = c.e1;
  header["gamma"] = c.gamma;
  write_atomic(csv_path, profile_csv(profile));
  write_atomic(json_path, dump_json(stamped(job, header)));
  job.say("profile: computed, w0 = ", format_double(profile.w0()));
  return profile;
}

struct Packed {
  OptimalPacking pack;
  double eta = 0.0;
  std::vector<double> eps;  // in the order given
};

Packed pack_stage(const Job& job, bool need_eps) {
  const JobConfig& c = job.config;
  std::size_t k = 0;
  if (c.k) {
    k = *c.k;
  } else {
    if (!c.delta0) config_error("either k or delta0 is required");
    k = choose_k(job.dom, *c.delta0);
  }
  Packed p{optimal_delta(job.dom, k), 0.0, {}};
  const double delta = p.pack.delta;
  p.eta = c.eta.value_or(delta / 10);
  if (!(p.eta > 0.0) || !(p.eta < delta / 2)) fail(ErrorKind::precondition, "eta must lie in (0, delta*/2)");
  if (need_eps) {
    for (double e : c.epsilon) p.eps.push_back(e);
    for (double d : c.epsilon_divisors) p.eps.push_back(delta / d);
    if (p.eps.empty()) config_error("an epsilon or epsilon_divisors list is required");
    for (double e : p.eps)
      if (e > delta / 5)
        fail(ErrorKind::precondition, "epsilon " + format_double(e) + " exceeds delta*/5 = " + format_double(delta / 5));
  }
  job.say("pack: k = ", k, ", delta* = ", format_double(delta));
  return p;
}

Json pack_summary(const Job& job, const Packed& p, const BoundaryGapReport& gap, bool gap_ok) {
  double chord_spread = 0.0;
  const std::size_t k = p.pack.config.k();
  for (std::size_t i = 0; i < k; ++i)
    chord_spread = std::max(chord_spread, std::abs(distance(p.pack.config.points[i], p.pack.config.points[(i + 1) % k]) -
                                                   2 * p.pack.delta));
  return stamped(job, {{"k", k},
                       {"delta", p.pack.delta},
                       {"eta", p.eta},
                       {"chord_max_deviation", chord_spread},
                       {"gap", gap.gap},
                       {"sup_boundary", gap.sup_boundary},
                       {"gap_samples", gap.samples},
                       {"gap_positive", gap_ok},
                       {"points", points_json(p.pack.config)}});
}

constexpr std::size_t kGapSamples = 10000;

BoundaryGapReport gap_report(const Job& job, const Packed& p, bool& ok) {
  try {
    ok = true;
    return boundary_gap_check(job.dom, p.pack.config.k(), p.pack.delta, p.eta, kGapSamples, job.config.seed);
  } catch (const BoundaryGapViolation& v) {
    ok = false;
    return v.report();
  }
}

std::shared_ptr<const Grid2D> grid_for(const Job& job, double eps) {
  return Grid2D::discretize(job.dom, job.config.h_ratio * eps);
}

ReducedEnergyModel model_for(const Job& job, const RadialProfile& profile, const Packed& p, double eps,
                             std::shared_ptr<const Grid2D> grid, EnergyForm form) {
  return ReducedEnergyModel(job.dom, profile, eps, form, p.eta, p.pack.delta, form == EnergyForm::psi_numeric ? std::move(grid) : nullptr);
}

struct Reduced {
  double eps = 0.0;
  MinimizeResult result;
};

std::vector<Reduced> reduce_stage(const Job& job, const RadialProfile& profile, const Packed& p) {
  std::vector<Reduced> out(p.eps.size());
  parallel_for(p.eps.size(), [&](std::size_t j) {
    const double eps = p.eps[j];
    auto grid = job.config.form == EnergyForm::psi_numeric ? grid_for(job, eps) : nullptr;
    const ReducedEnergyModel model = model_for(job, profile, p, eps, grid, job.config.form);
    out[j] = {eps, minimize_in_U(model, p.pack.config)};
    write_atomic(job.out / ("reduce_" + std::to_string(j) + ".csv"), trace_csv(out[j].result));
    job.say("reduce: eps = ", format_double(eps), ", log M = ", format_double(out[j].result.log_M), ", ",
            out[j].result.iterations, " iterations");
  });
  return out;
}

Json reduce_summary(const Job& job, const std::vector<Reduced>& red) {
  Json runs = Json::array();
  for (std::size_t j = 0; j < red.size(); ++j) {
    const MinimizeResult& r = red[j].result;
    runs.push_back({{"epsilon", red[j].eps},
                    {"trace", "reduce_" + std::to_string(j) + ".csv"},
                    {"log_M", r.log_M},
                    {"grad_norm", r.grad_norm},
                    {"iterations", r.iterations},
                    {"converged", r.converged},
                    {"stalled", r.stalled},
                    {"depth_deviation", r.depth_deviation},
                    {"chord_deviation", r.chord_deviation},
                    {"checks", {{"location_within_5eps", r.location_check}}},
                    {"points", points_json(r.config)}});
  }
  return stamped(job, {{"form", to_string(job.config.form)}, {"runs", runs}});
}

// Minimized crowns per eps, from reduce.json when it belongs to this config.
std::vector<SpikeConfiguration> minimized_crowns(const Job& job, const RadialProfile& profile, const Packed& p) {
  const fs::path path = job.out / "reduce.json";
  if (fs::exists(path)) {
    try {
      const Json j = Json::parse(read_text(path));
      if (j.at("config_hash").get<std::string>() == job.hash && j.at("runs").size() == p.eps.size()) {
        std::vector<SpikeConfiguration> out;
        for (const auto& run : j.at("runs")) out.push_back(points_from(run.at("points")));
        job.say("solve: minimized crowns from ", path.string());
        return out;
      }
    } catch (const Json::exception&) {
    }
  }
  std::vector<SpikeConfiguration> out;
  for (const Reduced& r : reduce_stage(job, profile, p)) out.push_back(r.result.config);
  return out;
}

struct Solved {
  double eps = 0.0;
  double h = 0.0;
  std::size_t nodes = 0;
  CrownSolveResult result;
  double residual = 0.0;
  std::vector<Peak> peaks;
  bool alternating = false;
  double peak_drift = 0.0;
  double ansatz_difference = 0.0;
  double symmetry_defect = 0.0;
  double psi_error = NAN;
};

// Largest distance from a peak to its nearest crown vertex; peaks must carry
// that vertex's sign and alternate around the crown.
void match_peaks(Solved& s, const SpikeConfiguration& crown) {
  s.alternating = s.peaks.size() == crown.k();
  for (const Peak& pk : s.peaks) {
    std::size_t best = 0;
    double nearest = INFINITY;
    for (std::size_t i = 0; i < crown.k(); ++i)
      if (const double d = distance(pk.location, crown.points[i]); d < nearest) {
        nearest = d;
        best = i;
      }
    s.peak_drift = std::max(s.peak_drift, nearest);
    if (pk.sign != SpikeConfiguration::sign(best)) s.alternating = false;
  }
}

Solved solve_one(const Job& job, const RadialProfile& profile, const Packed& p, std::size_t j,
                 const SpikeConfiguration& init, bool with_psi) {
  Solved s;
  s.eps = p.eps[j];
  const auto grid = grid_for(job, s.eps);
  s.h = grid->h();
  s.nodes = grid->size();
  if (with_psi) {
    const ReducedEnergyModel model = model_for(job, profile, p, s.eps, grid, EnergyForm::psi_numeric);
    const Vec2 probe = p.pack.config.points.front();
    s.psi_error = std::abs(psi_eps(model, probe) - 2.0 * (-signed_distance(job.dom, probe)));
  }
  s.result = solve_crown(job.nl, profile, grid, s.eps, init);
  s.residual = residual_norm(job.nl, s.result.field).sup;
  s.peaks = extract_peaks(s.result.field, profile.w0() / 2);
  match_peaks(s, p.pack.config);
  const DiscreteField ansatz = assemble_ansatz(grid, profile, s.eps, p.pack.config);
  for (std::size_t n = 0; n < grid->size(); ++n)
    s.ansatz_difference = std::max(s.ansatz_difference, std::abs(s.result.field.values[n] - ansatz.values[n]));
  s.symmetry_defect = lattice_symmetry_defect(s.result.field);

  const std::string tag = std::to_string(j);
  CsvTable field({"x", "y", "v"});
  for (std::size_t n = 0; n < grid->size(); ++n) {
    const Vec2 x = grid->position(n);
    field.add_row({x.x, x.y, s.result.field.values[n]});
  }
  write_atomic(job.out / ("solve_field_" + tag + ".csv"), field.str());
  CsvTable res({"step", "sup_residual"});
  for (std::size_t i = 0; i < s.result.residual_history.size(); ++i)
    res.add_row({static_cast<double>(i), s.result.residual_history[i]});
  write_atomic(job.out / ("solve_residuals_" + tag + ".csv"), res.str());
  CsvTable peaks({"x", "y", "sign", "amplitude"});
  for (const Peak& pk : s.peaks) peaks.add_row({pk.location.x, pk.location.y, static_cast<double>(pk.sign), pk.amplitude});
  write_atomic(job.out / ("solve_peaks_" + tag + ".csv"), peaks.str());
  job.say("solve: eps = ", format_double(s.eps), ", ", s.nodes, " nodes, residual ", format_double(s.residual), ", ",
          s.peaks.size(), " peaks");
  return s;
}

std::vector<std::size_t> by_decreasing_eps(const std::vector<double>& eps) {
  std::vector<std::size_t> order(eps.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return eps[a] > eps[b]; });
  return order;
}

std::vector<Solved> solve_stage(const Job& job, const RadialProfile& profile, const Packed& p,
                                const std::vector<SpikeConfiguration>& inits, bool continuation, bool with_psi) {
  std::vector<Solved> out(p.eps.size());
  if (continuation) {
    std::optional<SpikeConfiguration> previous;
    for (std::size_t j : by_decreasing_eps(p.eps)) {
      out[j] = solve_one(job, profile, p, j, previous.value_or(inits[j]), with_psi);
      previous = out[j].result.centers;
    }
  } else {
    parallel_for(p.eps.size(), [&](std::size_t j) { out[j] = solve_one(job, profile, p, j, inits[j], with_psi); });
  }
  return out;
}

Json solve_summary(const Job& job, const Packed& p, const std::vector<Solved>& sol) {
  Json runs = Json::array();
  for (std::size_t j = 0; j < sol.size(); ++j) {
    const Solved& s = sol[j];
    runs.push_back({{"epsilon", s.eps},
                    {"h", s.h},
                    {"nodes", s.nodes},
                    {"field", "solve_field_" + std::to_string(j) + ".csv"},
                    {"residuals", "solve_residuals_" + std::to_string(j) + ".csv"},
                    {"peaks_file", "solve_peaks_" + std::to_string(j) + ".csv"},
                    {"sup_residual", s.residual},
                    {"outer_iterations", s.result.outer_iterations},
                    {"inner_iterations", s.result.inner_iterations},
                    {"peaks", s.peaks.size()},
                    {"alternating", s.alternating},
                    {"max_peak_drift", s.peak_drift},
                    {"sup_difference_from_ansatz", s.ansatz_difference},
                    {"scaled_difference", s.ansatz_difference * std::exp(p.pack.delta / (2 * s.eps))},
                    {"symmetry_defect", s.symmetry_defect},
                    {"centers", points_json(s.result.centers)}});
  }
  return stamped(job, {{"runs", runs}});
}

// ---------------------------------------------------------------------------
// Verification

struct Criterion {
  std::string name;
  bool applicable = true;
  bool passed = false;
  Json measured = Json::object();
};

bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return true;
}

// Distance from the configuration to the nearest regular polygon about the
// domain centre: mean radius, circular-mean phase.
double regular_polygon_residual(const SpikeConfiguration& c, Vec2 centre) {
  const std::size_t k = c.k();
  double radius = 0.0;
  std::complex<double> phase = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const Vec2 d = c.points[i] - centre;
    radius += norm(d) / static_cast<double>(k);
    phase += std::polar(1.0, std::atan2(d.y, d.x) - 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k));
  }
  const double phi = std::arg(phase);
  double worst = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double a = phi + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
    worst = std::max(worst, distance(c.points[i], centre + Vec2{radius * std::cos(a), radius * std::sin(a)}));
  }
  return worst;
}

std::vector<Criterion> verify_criteria(const Job& job, const RadialProfile& profile, const Packed& p,
                                       const BoundaryGapReport& gap, bool gap_ok, const std::vector<Reduced>& red,
                                       const std::vector<Solved>& sol) {
  std::vector<Criterion> out;
  const double delta = p.pack.delta;
  const SpikeConfiguration& crown = p.pack.config;
  const std::size_t k = crown.k();
  const bool circle = job.config.domain.kind == CurveKind::circle;
  const auto order = by_decreasing_eps(p.eps);

  {
    Criterion c{"ground_state_profile"};
    const bool hypotheses = validate_hypotheses(job.nl).all_passed();
    const DecayFit fit = fit_decay(profile);
    c.passed = hypotheses && fit.relative_spread < 5e-3;
    c.measured = {{"w0", profile.w0()}, {"A", fit.A}, {"decay_spread", fit.relative_spread}, {"hypotheses", hypotheses}};
    out.push_back(c);
  }
  {
    Criterion c{"packing_chords"};
    double chord_dev = 0.0, far_min = INFINITY;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) {
        const double d = distance(crown.points[i], crown.points[j]);
        if (j == i + 1 || (i == 0 && j == k - 1)) chord_dev = std::max(chord_dev, std::abs(d - 2 * delta) / (2 * delta));
        else far_min = std::min(far_min, d);
      }
    c.passed = chord_dev < 1e-8 && (k <= 3 || far_min > 2 * delta);
    c.measured = {{"delta", delta}, {"chord_relative_deviation", chord_dev}, {"min_nonadjacent_distance", far_min}};
    if (circle) {
      const double s = std::sin(std::numbers::pi / static_cast<double>(k));
      const double closed = job.config.domain.radius * s / (1 + s);
      const double rel = std::abs(delta - closed) / closed;
      c.measured["closed_form_relative_error"] = rel;
      c.passed = c.passed && rel < 1e-8;
    }
    out.push_back(c);
  }
  {
    Criterion c{"boundary_gap"};
    c.passed = gap_ok && gap.sup_boundary < delta - 1e-3;
    c.measured = {{"sup_boundary", gap.sup_boundary}, {"delta", delta}, {"samples", gap.samples}};
    out.push_back(c);
  }
  {
    Criterion c{"contraction_property"};
    c.passed = true;
    Json runs = Json::array();
    for (double sep : {delta, 2 * delta}) {
      const double margin = check_strict_convexity(job.dom.boundary(), sep);
      if (!std::isfinite(margin)) continue;
      ContractionReport r;
      try {
        r = lemma_contraction_check(job.dom.boundary(), sep, margin / 2, kGapSamples, job.config.seed);
      } catch (const ContractionViolation& v) {
        r = v.report();
      }
      c.passed = c.passed && r.violations == 0;
      runs.push_back({{"separation", sep}, {"eta_max", margin / 2}, {"violations", r.violations}, {"worst_slack", r.worst_slack}});
    }
    c.measured = {{"runs", runs}};
    out.push_back(c);
  }
  {
    Criterion c{"psi_convergence"};
    std::vector<double> errs;
    for (std::size_t j : order) errs.push_back(sol[j].psi_error);
    c.passed = strictly_decreasing(errs);
    c.measured = {{"errors_by_decreasing_eps", errs}};
    out.push_back(c);
  }
  {
    Criterion c{"energy_scaling"};
    std::vector<double> rates;
    for (std::size_t j : order) {
      const ReducedEnergyModel m(job.dom, profile, p.eps[j], EnergyForm::leading, p.eta, delta);
      rates.push_back(-p.eps[j] * evaluate_M(m, crown).log_abs);
    }
    std::vector<double> gaps;
    for (double r : rates) gaps.push_back(std::abs(r - 2 * delta));
    c.passed = strictly_decreasing(gaps) && gaps.back() < 0.1 * 2 * delta;
    c.measured = {{"rates_by_decreasing_eps", rates}, {"target", 2 * delta}};
    out.push_back(c);
  }
  {
    Criterion c{"minimizer_location"};
    c.passed = true;
    Json runs = Json::array();
    for (const Reduced& r : red) {
      Json run{{"epsilon", r.eps},
               {"depth_deviation", r.result.depth_deviation},
               {"chord_deviation", r.result.chord_deviation},
               {"within_5eps", r.result.location_check}};
      c.passed = c.passed && r.result.location_check;
      if (circle) {
        const double fit = regular_polygon_residual(r.result.config, job.config.domain.center);
        run["regular_polygon_residual"] = fit;
        c.passed = c.passed && fit < 1e-6;
      }
      runs.push_back(run);
    }
    c.measured = {{"runs", runs}};
    out.push_back(c);
  }
  {
    Criterion c{"pde_solution"};
    std::vector<double> residuals, drifts, scaled;
    bool peaks_ok = true;
    for (std::size_t j : order) {
      const Solved& s = sol[j];
      residuals.push_back(s.residual);
      drifts.push_back(s.peak_drift);
      scaled.push_back(s.ansatz_difference * std::exp(delta / (2 * s.eps)));
      peaks_ok = peaks_ok && s.alternating;
    }
    const bool res_ok = std::all_of(residuals.begin(), residuals.end(), [](double r) { return r < 1e-10; });
    c.passed = res_ok && peaks_ok && strictly_decreasing(drifts) && strictly_decreasing(scaled);
    c.measured = {{"residuals", residuals},
                  {"alternating_peaks", peaks_ok},
                  {"peak_drift_by_decreasing_eps", drifts},
                  {"scaled_difference_by_decreasing_eps", scaled}};
    out.push_back(c);
  }
  {
    Criterion c{"symmetry"};
    c.applicable = circle;
    double worst = 0.0;
    for (const Solved& s : sol) worst = std::max(worst, s.symmetry_defect);
    c.passed = worst < 1e-8;
    c.measured = {{"max_defect", worst}};
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

CommandResult cmd_ground_state(const Job& job) {
  const RadialProfile profile = profile_stage(job);
  const NormalizationConstants c = normalization_constants(profile);
  job.say("w0 = ", format_double(profile.w0()));
  job.say("A = ", format_double(profile.decay_A()));
  job.say("e1 = ", format_double(c.e1));
  job.say("gamma = ", format_double(c.gamma));
  Json summary = profile_header(profile);
  summary["e1"] = c.e1;
  summary["gamma"] = c.gamma;
  return {ExitCode::pass, stamped(job, summary)};
}

void require_plane(const Job& job) {
  if (job.config.dimension != 2) config_error("pack, reduce, solve and verify need N = 2");
}

CommandResult cmd_pack(const Job& job) {
  require_plane(job);
  const Packed p = pack_stage(job, false);
  bool ok = true;
  const BoundaryGapReport gap = gap_report(job, p, ok);
  write_atomic(job.out / "crown.csv", crown_csv(job.dom, p.pack.config));
  const Json summary = pack_summary(job, p, gap, ok);
  write_atomic(job.out / "pack.json", dump_json(summary));
  job.say("gap = ", format_double(gap.gap));
  return {ok ? ExitCode::pass : ExitCode::criterion_failure, summary};
}

CommandResult cmd_reduce(const Job& job) {
  require_plane(job);
  const Packed p = pack_stage(job, true);
  const RadialProfile profile = profile_stage(job);
  const Json summary = reduce_summary(job, reduce_stage(job, profile, p));
  write_atomic(job.out / "reduce.json", dump_json(summary));
  return {ExitCode::pass, summary};
}

CommandResult cmd_solve(const Job& job, const RunOptions& options) {
  require_plane(job);
  const Packed p = pack_stage(job, true);
  const RadialProfile profile = profile_stage(job);
  const auto inits = minimized_crowns(job, profile, p);
  const Json summary = solve_summary(job, p, solve_stage(job, profile, p, inits, options.continuation, false));
  write_atomic(job.out / "solve.json", dump_json(summary));
  return {ExitCode::pass, summary};
}

struct StageTracker {
  std::string current = "validate";
};

CommandResult cmd_verify(const Job& job, const RunOptions& options, StageTracker& stage) {
  require_plane(job);
  const Packed p = pack_stage(job, true);
  stage.current = "ground_state";
  const RadialProfile profile = profile_stage(job);
  stage.current = "pack";
  bool gap_ok = true;
  const BoundaryGapReport gap = gap_report(job, p, gap_ok);
  write_atomic(job.out / "crown.csv", crown_csv(job.dom, p.pack.config));
  write_atomic(job.out / "pack.json", dump_json(pack_summary(job, p, gap, gap_ok)));
  stage.current = "reduce";
  const std::vector<Reduced> red = reduce_stage(job, profile, p);
  write_atomic(job.out / "reduce.json", dump_json(reduce_summary(job, red)));
  stage.current = "solve";
  const std::vector<SpikeConfiguration> inits(p.eps.size(), p.pack.config);
  const std::vector<Solved> sol = solve_stage(job, profile, p, inits, options.continuation, true);
  write_atomic(job.out / "solve.json", dump_json(solve_summary(job, p, sol)));
  stage.current = "verify";

  const auto criteria = verify_criteria(job, profile, p, gap, gap_ok, red, sol);
  bool all = true;
  Json list = Json::array();
  for (const Criterion& c : criteria) {
    if (c.applicable) all = all && c.passed;
    list.push_back({{"name", c.name}, {"applicable", c.applicable}, {"passed", c.passed}, {"measured", c.measured}});
    job.say("verify: ", c.name, " ", !c.applicable ? "n/a" : c.passed ? "PASS" : "FAIL");
  }
  const Json verdict = stamped(job, {{"pass", all}, {"failed_stage", nullptr}, {"criteria", list}});
  write_atomic(job.out / "verdict.json", dump_json(verdict));
  return {all ? ExitCode::pass : ExitCode::criterion_failure, verdict};
}

}  // namespace

// ---------------------------------------------------------------------------

bool JobConfig::operator==(const JobConfig& o) const {
  return domain == o.domain && p == o.p && dimension == o.dimension && epsilon == o.epsilon &&
         epsilon_divisors == o.epsilon_divisors && delta0 == o.delta0 && k == o.k && eta == o.eta &&
         h_ratio == o.h_ratio && form == o.form && output_dir == o.output_dir && seed == o.seed;
}

JobConfig parse_job_config(std::string_view text, const fs::path& base_dir) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, {"domain", "p", "N", "epsilon", "epsilon_divisors", "delta0", "k", "eta", "h_ratio", "form",
                     "output_dir", "seed"},
                 "config");
  JobConfig c;
  c.base_dir = base_dir;
  if (!j.contains("domain")) config_error("config needs a domain");
  c.domain = parse_domain(j.at("domain"));
  if (j.contains("p")) c.p = get_as<double>(j, "p");
  if (j.contains("N")) c.dimension = get_as<int>(j, "N");
  c.epsilon = positive_list(j, "epsilon");
  c.epsilon_divisors = positive_list(j, "epsilon_divisors");
  if (!c.epsilon.empty() && !c.epsilon_divisors.empty()) config_error("give epsilon or epsilon_divisors, not both");
  if (j.contains("delta0")) c.delta0 = get_as<double>(j, "delta0");
  if (j.contains("k")) {
    const auto k = get_as<long long>(j, "k");
    if (k < 2 || k % 2 != 0) config_error("k must be even and at least 2");
    c.k = static_cast<std::size_t>(k);
  }
  if (j.contains("eta")) c.eta = get_as<double>(j, "eta");
  if (j.contains("h_ratio")) c.h_ratio = get_as<double>(j, "h_ratio");
  if (!(c.h_ratio > 0.0) || c.h_ratio > 0.25) config_error("h_ratio must lie in (0, 1/4]");
  if (j.contains("form")) {
    const auto f = get_as<std::string>(j, "form");
    if (f == "leading") c.form = EnergyForm::leading;
    else if (f == "psi_numeric") c.form = EnergyForm::psi_numeric;
    else config_error("form must be leading or psi_numeric");
  }
  if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j, "output_dir");
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j, "seed");
  if (c.delta0 && !(*c.delta0 > 0.0)) config_error("delta0 must be positive");
  return c;
}

JobConfig load_job_config(const fs::path& path) {
  return parse_job_config(read_text(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

Json to_json(const JobConfig& c) {
  Json j{{"domain", domain_json(c.domain)},
         {"p", c.p},
         {"N", c.dimension},
         {"epsilon", c.epsilon},
         {"epsilon_divisors", c.epsilon_divisors},
         {"h_ratio", c.h_ratio},
         {"form", to_string(c.form)},
         {"output_dir", c.output_dir},
         {"seed", c.seed}};
  if (c.delta0) j["delta0"] = *c.delta0;
  if (c.k) j["k"] = *c.k;
  if (c.eta) j["eta"] = *c.eta;
  return j;
}

std::string serialize_job_config(const JobConfig& c) { return to_json(c).dump(); }

std::string config_hash(const JobConfig& c) { return hex64(fnv1a64(serialize_job_config(c))); }

PlanarDomain build_domain(const DomainSpec& d, const fs::path& base_dir) {
  switch (d.kind) {
    case CurveKind::circle: return PlanarDomain(ConvexCurve::circle(d.radius, d.center));
    case CurveKind::ellipse: return PlanarDomain(ConvexCurve::ellipse(d.a, d.b));
    case CurveKind::superellipse: return PlanarDomain(ConvexCurve::superellipse(d.a, d.b, d.m));
    default: break;
  }
  std::vector<Vec2> pts = d.control_points;
  if (!d.points_csv.empty()) {
    const fs::path path = fs::path(d.points_csv).is_absolute() ? fs::path(d.points_csv) : base_dir / d.points_csv;
    const CsvData csv = parse_csv(read_text(path));
    if (csv.header != std::vector<std::string>{"x", "y"}) config_error("spline points csv needs columns x,y");
    for (const auto& row : csv.rows) pts.push_back({row[0], row[1]});
  }
  return PlanarDomain(ConvexCurve::spline(std::move(pts)));
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SPIKE_CROWN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

CommandResult run_command(std::string_view command, const JobConfig& config, const RunOptions& options,
                          std::ostream& log) {
  std::mutex log_mutex;
  const std::string hash = config_hash(config);
  const fs::path out = config.output_dir;
  StageTracker stage;
  auto error_result = [&](ExitCode code, ErrorKind kind, const std::string& message) {
    Json e{{"command", std::string(command)}, {"failed_stage", stage.current}, {"kind", std::string(to_string(kind))},
           {"message", message}, {"config_hash", hash}, {"version", std::string(kToolkitVersion)}};
    if (const HypothesisReport hyp = validate_hypotheses(config.p, config.dimension); !hyp.all_passed()) {
      Json checks = Json::array();
      for (const auto& h : hyp.checks) checks.push_back({{"name", h.name}, {"passed", h.passed}, {"detail", h.detail}});
      e["hypotheses"] = checks;
    }
    if (command == "verify") e["pass"] = false;
    try {
      write_atomic(out / (command == "verify" ? "verdict.json" : "error.json"), dump_json(e));
    } catch (const Error&) {
    }
    log << "error (" << to_string(kind) << "): " << message << '\n';
    return CommandResult{code, e};
  };

  try {
    Job job{config, out, hash, Nonlinearity(config.p, config.dimension), build_domain(config.domain, config.base_dir),
            &log, &log_mutex};
    stage.current = std::string(command);
    if (command == "ground-state") return cmd_ground_state(job);
    if (command == "pack") return cmd_pack(job);
    if (command == "reduce") return cmd_reduce(job);
    if (command == "solve") return cmd_solve(job, options);
    if (command == "verify") {
      stage.current = "validate";
      return cmd_verify(job, options, stage);
    }
    return error_result(ExitCode::config_error, ErrorKind::config, "unknown command '" + std::string(command) + "'");
  } catch (const Error& e) {
    return error_result(is_precondition_error(e.kind()) ? ExitCode::config_error : ExitCode::numerical_failure, e.kind(),
                        e.what());
  } catch (const std::bad_alloc&) {
    return error_result(ExitCode::numerical_failure, ErrorKind::linear_solve, "out of memory");
  }
}

}  // namespace spike_crown
