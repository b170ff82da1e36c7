#include "mfc/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "mfc/report.hpp"

namespace mfc {

namespace {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command;
  std::string scenario;
  std::string config;
  std::string out = "mfc-out";
  std::optional<std::uint64_t> seed;
  std::size_t particles = 10000;
  std::optional<std::size_t> steps;
  double tol = 1e-3;
  double outer_tol = 1e-3;
  std::size_t max_iter = 50;
  std::size_t max_outer = 20;
  std::size_t degree = 2;
  double ridge = 1e-8;
  bool sup_basis = false;
  bool bounded_basis = false;
  double se_multiplier = 3.0;
  bool override_validation = false;
  std::string control;
  std::string control_v;
  std::string family;
  double eps_target = 0.05;
  std::size_t random_controls = 5;
};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

Json checks_json(const std::vector<Check>& checks) {
  Json out = Json::array();
  for (const auto& c : checks) out.push_back(Json{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return out;
}

bool all_passed(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(what + ": '" + item + "' is not a number");
    }
  }
  return out;
}

/// constant:v1[,v2..] | linear:a,b,c[;a,b,c..] | switch:from,to,base,alt | zero
Control parse_control_spec(const std::string& spec, const ActionGrid& set, std::size_t steps) {
  const std::size_t du = set.dim();
  if (spec.empty()) {
    std::vector<double> mid(du);
    for (std::size_t j = 0; j < du; ++j) mid[j] = 0.5 * (set.lower()[j] + set.upper()[j]);
    return Control::constant(set, mid);
  }
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  const std::string what = "control '" + spec + "'";
  if (kind == "zero") return Control::constant(set, std::vector<double>(du, 0.0));
  if (kind == "constant") {
    auto v = parse_numbers(rest, what);
    if (v.size() != du) throw ConfigError(what + ": expected " + std::to_string(du) + " values");
    return Control::constant(set, v);
  }
  if (kind == "linear") {
    std::vector<double> a, b, c;
    std::stringstream ss(rest);
    std::string part;
    while (std::getline(ss, part, ';')) {
      auto v = parse_numbers(part, what);
      if (v.size() != 3) throw ConfigError(what + ": each component needs a,b,c");
      a.push_back(v[0]);
      b.push_back(v[1]);
      c.push_back(v[2]);
    }
    if (a.size() != du) throw ConfigError(what + ": expected " + std::to_string(du) + " components");
    return Control::parametric(set, a, b, c);
  }
  if (kind == "switch") {
    auto v = parse_numbers(rest, what);
    if (du != 1 || v.size() != 4 || v[0] < 0 || v[1] < v[0]) {
      throw ConfigError(what + ": expected from,to,base,alt for a scalar action");
    }
    return Control::switched(Control::constant(set, {v[2]}), Control::constant(set, {v[3]}),
                             static_cast<std::size_t>(v[0]), std::min(static_cast<std::size_t>(v[1]), steps));
  }
  throw ConfigError(what + ": unknown kind '" + kind + "' (constant, linear, switch, zero)");
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<Scenario> load_scenarios(const RunConfig& cfg, bool allow_all) {
  if (!cfg.scenario.empty() && !cfg.config.empty()) throw ConfigError("give either --scenario or --config, not both");
  try {
    if (!cfg.scenario.empty()) return {builtin_scenario(cfg.scenario)};
    if (!cfg.config.empty()) return {parse_scenario(read_file(cfg.config))};
  } catch (const ScenarioError& e) {
    throw ConfigError(e.what());
  }
  if (allow_all) return builtin_scenarios();
  throw ConfigError("one of --scenario or --config is required");
}

void validate_config(const RunConfig& cfg) {
  if (!cfg.seed) throw ConfigError("--seed is required");
  if (cfg.particles < 100) throw ConfigError("--particles must be at least 100");
  if (cfg.steps && *cfg.steps < 1) throw ConfigError("--steps must be at least 1");
  if (!(cfg.tol > 0.0) || !(cfg.outer_tol > 0.0)) throw ConfigError("tolerances must be positive");
  if (!(cfg.se_multiplier > 0.0)) throw ConfigError("--se-multiplier must be positive");
  if (cfg.max_iter < 1 || cfg.max_outer < 1) throw ConfigError("iteration caps must be at least 1");
  if (cfg.degree < 1) throw ConfigError("--basis-degree must be at least 1");
  if (cfg.ridge < 0.0) throw ConfigError("--ridge must be >= 0");
}

void gate_validation(const RunConfig& cfg, const ValidationReport& v, const Scenario& s) {
  if (v.has_violation() && !cfg.override_validation) {
    std::string ids;
    for (const auto& c : v.checks)
      if (c.status == AssumptionStatus::violated) ids += (ids.empty() ? "" : ", ") + c.id + " (" + c.reason + ")";
    throw ConfigError("scenario '" + s.name + "' violates " + ids + "; pass --override-validation to run anyway");
  }
}

Json config_json(const RunConfig& cfg) {
  Json out{{"scenario", cfg.scenario.empty() ? Json(nullptr) : Json(cfg.scenario)},
           {"config", cfg.config.empty() ? Json(nullptr) : Json(cfg.config)},
           {"seed", cfg.seed ? Json(*cfg.seed) : Json(nullptr)},
           {"particles", cfg.particles},
           {"steps", cfg.steps ? Json(*cfg.steps) : Json(nullptr)},
           {"tol", cfg.tol},
           {"outer_tol", cfg.outer_tol},
           {"max_iter", cfg.max_iter},
           {"max_outer", cfg.max_outer},
           {"basis_degree", cfg.degree},
           {"ridge", cfg.ridge},
           {"basis_running_sup", cfg.sup_basis},
           {"basis_bounded_features", cfg.bounded_basis},
           {"se_multiplier", cfg.se_multiplier},
           {"override_validation", cfg.override_validation}};
  if (!cfg.control.empty()) out["control"] = cfg.control;
  if (!cfg.control_v.empty()) out["control_v"] = cfg.control_v;
  if (!cfg.family.empty()) out["family"] = cfg.family;
  if (cfg.command == "optimize") out["eps_target"] = cfg.eps_target;
  if (cfg.command == "verify") out["random_controls"] = cfg.random_controls;
  return out;
}

BasisSpec basis_of(const RunConfig& cfg) {
  BasisSpec b;
  b.degree = cfg.degree;
  b.ridge = cfg.ridge;
  b.use_running_sup = cfg.sup_basis;
  b.bounded_features = cfg.bounded_basis;
  return b;
}

FixpointOptions fixpoint_of(const RunConfig& cfg) { return {cfg.tol, cfg.max_iter}; }

Json scenario_json(const Scenario& s) { return Json::parse(serialize_scenario(s)); }

/// Largest |E[L_t] - 1| in units of its standard error.
double normalization_score(const DensityProcess& density) {
  double worst = 0.0;
  for (const auto& e : density.mean_density()) {
    const double dev = std::abs(e.value - 1.0);
    if (dev == 0.0) continue;
    worst = std::max(worst, e.se > 0.0 ? dev / e.se : std::numeric_limits<double>::infinity());
  }
  return worst;
}

Check normalization_check(const std::string& name, const DensityProcess& density) {
  const double score = normalization_score(density);
  return {name, score <= 4.0, "max |E[L_t] - 1| / SE = " + fmt(score) + " (limit 4)"};
}

ActionPath actions_or_empty(const ReferenceSample& sample, const std::optional<Control>& c) {
  return c ? sample_control(sample, *c) : sample.empty_actions();
}

struct Output {
  Json report;
  std::vector<std::pair<std::string, CsvTable>> tables;
  std::vector<Check> checks;
};

// ------------------------------------------------------------------ commands

void cmd_simulate(const RunConfig& cfg, const Scenario& s, Output& o) {
  const ReferenceSample sample(s, cfg.particles, *cfg.seed, cfg.steps);
  const auto& grid = sample.grid();
  const std::size_t m = sample.particles();
  CsvTable moments({"t", "mean_x0", "sd_x0", "mean_running_sup"});
  Json mean = Json::array(), sd = Json::array(), sup = Json::array();
  bool start_ok = true, sup_ok = true;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto x = path_statistic(sample.paths(), k, PathStatisticKind::current_value);
    const auto r = path_statistic(sample.paths(), k, PathStatisticKind::running_sup);
    const Estimate e = sample_mean(x);
    const double s_dev = e.se * std::sqrt(static_cast<double>(m));
    const Estimate rs = sample_mean(r);
    mean.push_back(to_json(e));
    sd.push_back(s_dev);
    sup.push_back(to_json(rs));
    moments.add({csv_number(grid.times[k]), csv_number(e.value), csv_number(s_dev), csv_number(rs.value)});
    for (std::size_t i = 0; i < m; ++i) {
      if (k == 0 && sample.state(i, 0)[0] != s.initial_point[0]) start_ok = false;
      if (k > 0 && sample.running_sup(i, k) < sample.running_sup(i, k - 1)) sup_ok = false;
    }
  }
  const std::size_t shown = std::min<std::size_t>(m, 20);
  std::vector<std::string> header{"t"};
  for (std::size_t i = 0; i < shown; ++i) header.push_back("particle_" + std::to_string(i));
  CsvTable paths(header);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    std::vector<std::string> row{csv_number(grid.times[k])};
    for (std::size_t i = 0; i < shown; ++i) row.push_back(csv_number(sample.state(i, k)[0]));
    paths.add(row);
  }
  o.report["results"] = Json{{"dt", grid.dt}, {"times", grid.size()}, {"mean_x0", mean}, {"sd_x0", sd},
                             {"mean_running_sup", sup}};
  o.tables.emplace_back("moments.csv", moments);
  o.tables.emplace_back("paths.csv", paths);
  o.checks.push_back({"paths start at the initial point", start_ok, ""});
  o.checks.push_back({"running supremum nondecreasing", sup_ok, ""});
}

void cmd_fixpoint(const RunConfig& cfg, const Scenario& s, Output& o) {
  const ReferenceSample sample(s, cfg.particles, *cfg.seed, cfg.steps);
  const Control u = parse_control_spec(cfg.control, s.actions_u, sample.grid().steps);
  std::optional<Control> v;
  if (s.is_game()) v = parse_control_spec(cfg.control_v, *s.actions_v, sample.grid().steps);
  const FixpointResult fp =
      fixpoint_measure_flow(sample, sample_control(sample, u), actions_or_empty(sample, v), fixpoint_of(cfg));
  const ContractionReport contraction = contraction_report(fp.diagnostics);

  CsvTable dist({"iteration", "distance", "se", "ratio"});
  for (const auto& r : contraction.rows) {
    dist.add({std::to_string(r.iteration), csv_number(r.distance), csv_number(r.se),
              r.ratio ? csv_number(*r.ratio) : ""});
  }
  std::vector<std::string> header{"t", "mean_density", "mean_density_se"};
  for (const auto& st : s.statistics) header.push_back(st.name);
  CsvTable flow(header);
  Json stats = Json::object();
  for (const auto& st : s.statistics) stats[st.name] = Json::array();
  for (std::size_t k = 0; k < sample.grid().size(); ++k) {
    const auto& e = fp.density.mean_density()[k];
    std::vector<std::string> row{csv_number(sample.grid().times[k]), csv_number(e.value), csv_number(e.se)};
    for (const auto& st : s.statistics) {
      const Estimate w = weighted_statistic(fp.flow, k, st.name);
      stats[st.name].push_back(to_json(w));
      row.push_back(csv_number(w.value));
    }
    flow.add(row);
  }
  o.report["results"] = Json{{"control", u.name()},
                             {"control_v", v ? Json(v->name()) : Json(nullptr)},
                             {"diagnostics", to_json(fp.diagnostics)},
                             {"contraction", to_json(contraction)},
                             {"max_abs_log_density", fp.density.max_abs_log()},
                             {"statistics", stats}};
  o.tables.emplace_back("fixpoint_distances.csv", dist);
  o.tables.emplace_back("flow.csv", flow);
  o.checks.push_back({"fixed point converged", fp.diagnostics.converged,
                      "iterations " + std::to_string(fp.diagnostics.iterations) + ", final distance " +
                          fmt(fp.diagnostics.distances.back())});
  o.checks.push_back(normalization_check("martingale normalization", fp.density));
}

void cmd_evaluate(const RunConfig& cfg, const Scenario& s, Output& o) {
  const ReferenceSample sample(s, cfg.particles, *cfg.seed, cfg.steps);
  const Control u = parse_control_spec(cfg.control, s.actions_u, sample.grid().steps);
  std::optional<Control> v;
  if (s.is_game()) v = parse_control_spec(cfg.control_v, *s.actions_v, sample.grid().steps);
  try {
    const IdentityCheck id = payoff_identity(sample, sample_control(sample, u), actions_or_empty(sample, v),
                                             basis_of(cfg), fixpoint_of(cfg), cfg.se_multiplier);
    o.report["results"] = Json{{"control", u.name()},
                               {"control_v", v ? Json(v->name()) : Json(nullptr)},
                               {"payoff", to_json(id.result.payoff)},
                               {"bsde_y0", to_json(id.y0)},
                               {"identity_gap", Json{{"value", id.gap}, {"se", id.se}}},
                               {"fixpoint", to_json(id.result.fixpoint.diagnostics)}};
    o.checks.push_back({"fixed point converged", true, ""});
    o.checks.push_back({"payoff identity", id.ok,
                        "|Y_0 - J| = " + fmt(id.gap) + ", limit " + fmt(cfg.se_multiplier * id.se)});
    o.checks.push_back(normalization_check("martingale normalization", id.result.fixpoint.density));
  } catch (const ConvergenceError& e) {
    o.report["results"] = Json{{"control", u.name()}, {"fixpoint", to_json(e.diagnostics)}};
    o.checks.push_back({"fixed point converged", false, e.what()});
  }
}

void add_comparison_table(Output& o, const ComparisonReport& comp, const std::string& file) {
  CsvTable t({"control", "y0", "y0_se", "payoff", "payoff_se", "identity_gap", "identity_ok", "slack", "slack_se",
              "slack_ok"});
  for (const auto& r : comp.rows) {
    t.add({r.name, csv_number(r.y0.value), csv_number(r.y0.se), csv_number(r.payoff.value), csv_number(r.payoff.se),
           csv_number(r.identity_gap), r.identity_ok ? "true" : "false", csv_number(r.slack),
           csv_number(r.slack_se), r.slack_ok ? "true" : "false"});
  }
  o.tables.emplace_back(file, t);
}

void cmd_optimize(const RunConfig& cfg, const Scenario& s, const ValidationReport& v, Output& o) {
  if (s.is_game()) throw ConfigError("scenario '" + s.name + "' is a game; use the game command");
  gate_validation(cfg, v, s);
  const ReferenceSample sample(s, cfg.particles, *cfg.seed, cfg.steps);
  const BasisSpec basis = basis_of(cfg);
  PolicyOptions popts;
  popts.outer_tol = cfg.outer_tol;
  popts.max_outer = cfg.max_outer;
  popts.fixpoint = fixpoint_of(cfg);

  OptimizationReport opt;
  try {
    opt = policy_iteration(sample, s.actions_u, basis, popts);
  } catch (const ConvergenceError& e) {
    o.report["results"] = Json{{"fixpoint", to_json(e.diagnostics)}, {"error", e.what()}};
    o.checks.push_back({"policy iteration", false, e.what()});
    return;
  }
  std::vector<Control> family;
  if (!cfg.family.empty()) {
    Json specs;
    try {
      specs = Json::parse(read_file(cfg.family));
    } catch (const Json::parse_error& e) {
      throw ConfigError("family file '" + cfg.family + "': " + e.what());
    }
    if (!specs.is_array() || specs.empty()) throw ConfigError("family file must hold a nonempty array of control specs");
    for (const auto& spec : specs) {
      if (!spec.is_string()) throw ConfigError("family file entries must be control spec strings");
      family.push_back(parse_control_spec(spec.get<std::string>(), s.actions_u, sample.grid().steps));
    }
  } else {
    family.push_back(opt.best);
    for (const auto& c : standard_test_controls(s.actions_u, sample.grid().steps)) family.push_back(c);
  }
  const NearOptimalReport near = near_optimal_search(sample, family, opt.value, cfg.eps_target, popts.fixpoint);

  std::vector<Control> compared{opt.best};
  for (const auto& c : standard_test_controls(s.actions_u, sample.grid().steps)) compared.push_back(c);
  const ComparisonReport comp =
      verify_comparison(sample, opt.value, compared, basis, popts.fixpoint, cfg.se_multiplier, opt.grid_term);

  o.report["results"] = Json{{"optimization", to_json(opt)},
                             {"near_optimal", to_json(near)},
                             {"comparison", to_json(comp)},
                             {"caveats", v.caveats()}};
  CsvTable trace({"iteration", "distance", "distance_se", "value", "value_se", "fixpoint_iterations"});
  for (const auto& t : opt.trace) {
    trace.add({std::to_string(t.iteration), csv_number(t.distance), csv_number(t.distance_se),
               csv_number(t.value.value), csv_number(t.value.se), std::to_string(t.fixpoint_iterations)});
  }
  CsvTable fam({"control", "converged", "payoff", "payoff_se"});
  for (const auto& r : near.rows) {
    fam.add({r.name, r.converged ? "true" : "false", csv_number(r.payoff.value), csv_number(r.payoff.se)});
  }
  o.tables.emplace_back("outer_trace.csv", trace);
  o.tables.emplace_back("family.csv", fam);
  add_comparison_table(o, comp, "comparison.csv");

  o.checks.push_back({"outer loop converged", opt.converged,
                      "matching residual " + fmt(opt.matching_residual) + " after " +
                          std::to_string(opt.iterations) + " iterations"});
  o.checks.push_back({"certificate consistent", !opt.inconsistent,
                      "epsilon " + fmt(opt.epsilon.value) + " +- " + fmt(opt.epsilon.se)});
  o.checks.push_back({"near-optimal within target", near.success,
                      "epsilon " + fmt(near.epsilon.value) + ", target " + fmt(cfg.eps_target)});
  o.checks.push_back({"payoff identity and comparison", comp.all_ok, ""});
}

std::vector<Control> grid_constants(const ActionGrid& g) {
  std::vector<Control> out;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const auto p = g.point(j);
    out.push_back(Control::constant(g, {p.begin(), p.end()}));
  }
  return out;
}

GameOptions game_options(const RunConfig& cfg) {
  GameOptions g;
  g.outer_tol = cfg.outer_tol;
  g.max_outer = cfg.max_outer;
  g.fixpoint = fixpoint_of(cfg);
  return g;
}

void add_slack_tables(Output& o, const SaddleVerification& ver) {
  auto table = [](const std::vector<SlackEntry>& entries) {
    CsvTable t({"control", "payoff", "payoff_se", "slack", "slack_se", "ok"});
    for (const auto& e : entries) {
      t.add({e.name, csv_number(e.payoff.value), csv_number(e.payoff.se), csv_number(e.slack), csv_number(e.se),
             e.ok ? "true" : "false"});
    }
    return t;
  };
  o.tables.emplace_back("saddle_u_slacks.csv", table(ver.u_slacks));
  o.tables.emplace_back("saddle_v_slacks.csv", table(ver.v_slacks));
}

void cmd_game(const RunConfig& cfg, const Scenario& s, const ValidationReport& v, Output& o, std::ostream& err) {
  if (!s.is_game()) throw ConfigError("scenario '" + s.name + "' has no second player; use optimize");
  gate_validation(cfg, v, s);
  const ReferenceSample sample(s, cfg.particles, *cfg.seed, cfg.steps);
  SaddleReport rep;
  try {
    rep = solve_game(sample, basis_of(cfg), game_options(cfg));
  } catch (const ConvergenceError& e) {
    o.report["results"] = Json{{"fixpoint", to_json(e.diagnostics)}, {"error", e.what()}};
    o.checks.push_back({"saddle synthesis", false, e.what()});
    return;
  }
  CsvTable profile({"step", "max_gap", "mean_gap"});
  for (std::size_t k = 0; k < rep.gap.profile_max.size(); ++k) {
    profile.add({std::to_string(k), csv_number(rep.gap.profile_max[k]), csv_number(rep.gap.profile_mean[k])});
  }
  o.tables.emplace_back("isaacs_profile.csv", profile);
  o.checks.push_back({"Isaacs condition", rep.isaacs_ok, "max gap " + fmt(rep.gap.max_gap)});
  if (!rep.isaacs_ok) {
    err << "mfc game: " << rep.diagnostic << "\n";
    o.report["results"] = Json{{"saddle", to_json(rep)}};
    return;
  }
  const SaddleVerification ver = verify_saddle(sample, rep, grid_constants(s.actions_u), grid_constants(*s.actions_v),
                                               fixpoint_of(cfg), cfg.se_multiplier);
  o.report["results"] = Json{{"saddle", to_json(rep)}, {"verification", to_json(ver)}, {"caveats", v.caveats()}};
  add_slack_tables(o, ver);
  o.checks.push_back({"outer loop converged", rep.converged, "matching residual " + fmt(rep.matching_residual)});
  o.checks.push_back({"terminal saddle condition", rep.terminal_ok, rep.terminal_note});
  o.checks.push_back({"saddle inequalities", ver.all_ok, ""});
}

// Invariant matrix for one scenario.
Json verify_scenario(const RunConfig& cfg, const Scenario& s, std::vector<Check>& checks, CsvTable& rows) {
  const ReferenceSample sample(s, cfg.particles, *cfg.seed, cfg.steps);
  const BasisSpec basis = basis_of(cfg);
  const FixpointOptions fopts = fixpoint_of(cfg);
  const std::size_t steps = sample.grid().steps;
  const std::size_t last = steps;
  const double k_se = cfg.se_multiplier;
  const auto test_u = standard_test_controls(s.actions_u, steps, 0);
  std::vector<Control> test_v;
  if (s.is_game()) test_v = standard_test_controls(*s.actions_v, steps, 1);

  auto add = [&](const std::string& name, bool passed, const std::string& detail) {
    checks.push_back({s.name + ": " + name, passed, detail});
    rows.add({s.name, name, passed ? "true" : "false", detail});
  };

  Json out = Json::object();
  Json identity = Json::array();
  std::vector<PayoffResult> results;
  for (std::size_t c = 0; c < test_u.size(); ++c) {
    const ActionPath up = sample_control(sample, test_u[c]);
    const ActionPath vp = s.is_game() ? sample_control(sample, test_v[c]) : sample.empty_actions();
    const std::string label = test_u[c].name() + (s.is_game() ? " vs " + test_v[c].name() : "");
    try {
      IdentityCheck id = payoff_identity(sample, up, vp, basis, fopts, k_se);
      identity.push_back(Json{{"control", label},
                              {"payoff", to_json(id.result.payoff)},
                              {"y0", to_json(id.y0)},
                              {"gap", Json{{"value", id.gap}, {"se", id.se}}},
                              {"ok", id.ok}});
      add("payoff identity [" + label + "]", id.ok, "gap " + fmt(id.gap) + ", limit " + fmt(k_se * id.se));
      const Check norm = normalization_check("", id.result.fixpoint.density);
      add("martingale normalization [" + label + "]", norm.passed, norm.detail);
      results.push_back(std::move(id.result));
    } catch (const ConvergenceError& e) {
      add("fixed point [" + label + "]", false, e.what());
    }
  }
  out["payoff_identity"] = identity;

  if (results.size() >= 2) {
    const MeasureFlow& a = results[0].fixpoint.flow;
    const MeasureFlow& b = results[1].fixpoint.flow;
    if (s.dim == 1) {
      double worst = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k <= last; ++k) {
        const TVEstimate marg = tv_marginal(a, b, k);
        const TVEstimate path = tv_pathspace(a, b, k);
        worst = std::max(worst, marg.value - (path.value + 5.0 * path.se + marg.bin_width));
      }
      out["marginal_domination_margin"] = worst;
      add("marginal domination", worst <= 0.0, "max excess " + fmt(worst));
    }
    const auto stats_a = statistics_table(a);
    const auto stats_b = statistics_table(b);
    const DriftEvaluator fa = scenario_drift(sample, stats_a, results[0].u, results[0].v);
    const DriftEvaluator fb = scenario_drift(sample, stats_b, results[1].u, results[1].v);
    const HellingerBound hb = hellinger_bound(a, fa, fb, sample.diffusion(), sample.grid());
    const TVEstimate d = tv_pathspace(a, b, last);
    out["hellinger"] = Json{{"distance", to_json(d)}, {"gamma", to_json(hb.gamma)}, {"bound", hb.bound}};
    add("Hellinger domination", d.value <= hb.bound + 5.0 * d.se,
        "D_T " + fmt(d.value) + ", bound " + fmt(hb.bound));
  }

  if (!s.is_game()) {
    PolicyOptions popts;
    popts.outer_tol = cfg.outer_tol;
    popts.max_outer = cfg.max_outer;
    popts.fixpoint = fopts;
    try {
      const OptimizationReport opt = policy_iteration(sample, s.actions_u, basis, popts);
      out["optimization"] = to_json(opt);
      add("outer loop converged", opt.converged, "matching residual " + fmt(opt.matching_residual));
      add("certificate consistent", !opt.inconsistent,
          "epsilon " + fmt(opt.epsilon.value) + " +- " + fmt(opt.epsilon.se));
      std::vector<Control> compared{opt.best};
      for (const auto& c : test_u) compared.push_back(c);
      for (const auto& c : random_feedback_controls(s.actions_u, cfg.random_controls, *cfg.seed)) compared.push_back(c);
      const ComparisonReport comp =
          verify_comparison(sample, opt.value, compared, basis, fopts, k_se, opt.grid_term);
      out["comparison"] = to_json(comp);
      bool ids = true, slacks = true;
      for (const auto& r : comp.rows) {
        ids = ids && r.identity_ok;
        slacks = slacks && r.slack_ok;
      }
      add("payoff identity [comparison controls]", ids, std::to_string(comp.rows.size()) + " controls");
      add("comparison Y*_0 <= Y^u_0", slacks, std::to_string(comp.rows.size()) + " controls");
    } catch (const ConvergenceError& e) {
      add("policy iteration", false, e.what());
    }
  } else {
    try {
      const SaddleReport rep = solve_game(sample, basis, game_options(cfg));
      out["saddle"] = to_json(rep);
      if (!rep.isaacs_ok) {
        const double slack = rep.upper_value.value - rep.lower_value.value;
        const double se = combined_se(rep.upper_value.se, rep.lower_value.se);
        add("envelope order lower <= upper", slack >= -k_se * se,
            "Isaacs fails (max gap " + fmt(rep.gap.max_gap) + "); upper - lower = " + fmt(slack));
      } else {
        add("outer loop converged", rep.converged, "matching residual " + fmt(rep.matching_residual));
        add("terminal saddle condition", rep.terminal_ok, rep.terminal_note);
        const SaddleVerification ver = verify_saddle(sample, rep, test_u, test_v, fopts, k_se);
        out["saddle_verification"] = to_json(ver);
        add("saddle inequalities", ver.all_ok, "");
      }
    } catch (const ConvergenceError& e) {
      add("saddle synthesis", false, e.what());
    }
  }
  return out;
}

void cmd_verify(const RunConfig& cfg, const std::vector<Scenario>& scenarios, Output& o) {
  Json per = Json::object();
  CsvTable rows({"scenario", "check", "passed", "detail"});
  for (const auto& s : scenarios) {
    const ValidationReport v = validate_scenario(s);
    gate_validation(cfg, v, s);
    Json block = verify_scenario(cfg, s, o.checks, rows);
    block["validation"] = to_json(v);
    per[s.name] = block;
  }
  o.report["results"] = per;
  o.tables.emplace_back("verify_checks.csv", rows);
}

void add_common(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--scenario", cfg.scenario, "built-in scenario name");
  sub->add_option("--config", cfg.config, "scenario config file (JSON)");
  sub->add_option("--seed", cfg.seed, "RNG seed (required)");
  sub->add_option("--particles", cfg.particles, "number of reference paths M (>= 100)");
  sub->add_option("--steps", cfg.steps, "time steps N (default: scenario)");
  sub->add_option("--out", cfg.out, "output directory");
  sub->add_option("--tol", cfg.tol, "fixed-point tolerance on D_T");
  sub->add_option("--max-iter", cfg.max_iter, "fixed-point iteration cap");
  sub->add_option("--outer-tol", cfg.outer_tol, "outer-loop matching tolerance");
  sub->add_option("--max-outer", cfg.max_outer, "outer-loop iteration cap");
  sub->add_option("--basis-degree", cfg.degree, "regression polynomial degree");
  sub->add_option("--ridge", cfg.ridge, "ridge regularization (>= 0)");
  sub->add_flag("--basis-running-sup", cfg.sup_basis, "add the running supremum to the regression basis");
  sub->add_flag("--basis-bounded", cfg.bounded_basis, "add tanh features to the regression basis");
  sub->add_option("--se-multiplier", cfg.se_multiplier, "standard-error multiplier of the checks");
  sub->add_flag("--override-validation", cfg.override_validation, "run despite violated assumptions");
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Mean-field stochastic control and zero-sum games by Girsanov reweighting", "mfc"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersion);

  auto* simulate = app.add_subcommand("simulate", "simulate the reference ensemble");
  auto* fixpoint = app.add_subcommand("fixpoint", "fixed-point measure flow of one control");
  auto* evaluate = app.add_subcommand("evaluate", "payoff J(u) and its BSDE value");
  auto* optimize = app.add_subcommand("optimize", "policy iteration, near-optimal search, comparison");
  auto* game = app.add_subcommand("game", "saddle point of a zero-sum game");
  auto* verify = app.add_subcommand("verify", "invariant matrix over built-in or given scenarios");
  auto* list = app.add_subcommand("list-scenarios", "print the built-in scenario names");
  for (auto* sub : {simulate, fixpoint, evaluate, optimize, game, verify}) add_common(sub, cfg);
  for (auto* sub : {fixpoint, evaluate}) {
    sub->add_option("--control", cfg.control, "constant:v | linear:a,b,c | switch:from,to,base,alt | zero");
    sub->add_option("--control-v", cfg.control_v, "second player's control (games)");
  }
  optimize->add_option("--family", cfg.family, "JSON array of control specs for the near-optimal search");
  optimize->add_option("--eps-target", cfg.eps_target, "target epsilon of the near-optimal search");
  verify->add_option("--random-controls", cfg.random_controls, "random feedback controls in the comparison");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "mfc: " << e.what() << "\n" << app.help();
    return kExitConfigError;
  }

  if (list->parsed()) {
    for (const auto& name : builtin_names()) out << name << "\n";
    return kExitOk;
  }
  cfg.command = app.get_subcommands().front()->get_name();

  const auto start = std::chrono::steady_clock::now();
  Output o;
  try {
    validate_config(cfg);
    const auto scenarios = load_scenarios(cfg, cfg.command == "verify");
    o.report["command"] = cfg.command;
    o.report["version"] = kVersion;
    o.report["config"] = config_json(cfg);
    if (scenarios.size() == 1) {
      const ValidationReport v = validate_scenario(scenarios.front());
      o.report["scenario"] = scenario_json(scenarios.front());
      o.report["validation"] = to_json(v);
      const Scenario& s = scenarios.front();
      if (cfg.command == "simulate") cmd_simulate(cfg, s, o);
      if (cfg.command == "fixpoint") cmd_fixpoint(cfg, s, o);
      if (cfg.command == "evaluate") cmd_evaluate(cfg, s, o);
      if (cfg.command == "optimize") cmd_optimize(cfg, s, v, o);
      if (cfg.command == "game") cmd_game(cfg, s, v, o, err);
    } else {
      Json names = Json::array();
      for (const auto& s : scenarios) names.push_back(s.name);
      o.report["scenarios"] = names;
    }
    if (cfg.command == "verify") cmd_verify(cfg, scenarios, o);
  } catch (const ConfigError& e) {
    err << "mfc " << cfg.command << ": " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::invalid_argument& e) {
    err << "mfc " << cfg.command << ": " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "mfc " << cfg.command << ": " << e.what() << "\n";
    o.checks.push_back({"run completed", false, e.what()});
  }

  const bool passed = all_passed(o.checks);
  o.report["checks"] = checks_json(o.checks);
  o.report["passed"] = passed;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  try {
    std::filesystem::create_directories(cfg.out);
    const std::filesystem::path dir(cfg.out);
    {
      std::ofstream f(dir / "report.json", std::ios::binary);
      if (!f) throw std::runtime_error("cannot write " + (dir / "report.json").string());
      f << o.report.dump(2) << "\n";
    }
    for (const auto& [name, table] : o.tables) table.write((dir / name).string());
    std::ofstream t(dir / "timing.json", std::ios::binary);
    t << Json{{"command", cfg.command}, {"wall_seconds", seconds}}.dump(2) << "\n";
  } catch (const std::exception& e) {
    err << "mfc " << cfg.command << ": " << e.what() << "\n";
    return kExitConfigError;
  }

  for (const auto& c : o.checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : " (" + c.detail + ")") << "\n";
  }
  out << "report: " << (std::filesystem::path(cfg.out) / "report.json").string() << "\n";
  return passed ? kExitOk : kExitCheckFailed;
}

}  // namespace mfc
