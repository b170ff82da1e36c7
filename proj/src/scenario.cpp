#include "mfc/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace mfc {

using nlohmann::json;

bool Matrix::is_zero() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return v == 0.0; });
}

// ---------------------------------------------------------------- statistics

double StatisticSpec::operator()(std::span<const double> x) const {
  const double v = x[component];
  switch (kind) {
    case Kind::identity:
      return v;
    case Kind::tanh:
      return std::tanh(v / scale);
    case Kind::square:
      return v * v;
    case Kind::indicator_bin:
      return (v >= lower && v < upper) ? 1.0 : 0.0;
  }
  return 0.0;
}

bool StatisticSpec::bounded() const {
  return kind == Kind::tanh || kind == Kind::indicator_bin;
}

std::optional<double> StatisticSpec::sup_norm() const {
  if (bounded()) return 1.0;
  return std::nullopt;
}

std::optional<double> StatisticSpec::lipschitz() const {
  switch (kind) {
    case Kind::identity:
      return 1.0;
    case Kind::tanh:
      return 1.0 / scale;
    case Kind::square:
    case Kind::indicator_bin:
      return std::nullopt;
  }
  return std::nullopt;
}

// --------------------------------------------------------------- action grid

ActionGrid ActionGrid::uniform(std::vector<double> lower, std::vector<double> upper,
                               std::vector<std::size_t> counts) {
  const std::size_t dim = lower.size();
  if (dim == 0 || upper.size() != dim || counts.size() != dim) {
    throw std::invalid_argument("action grid: lower, upper and points must have equal nonzero length");
  }
  std::size_t total = 1;
  for (std::size_t j = 0; j < dim; ++j) {
    if (counts[j] < 1) throw std::invalid_argument("action grid: point count must be >= 1");
    if (upper[j] < lower[j]) throw std::invalid_argument("action grid: upper < lower");
    if (counts[j] == 1 && upper[j] != lower[j]) {
      throw std::invalid_argument("action grid: a single point needs lower == upper");
    }
    total *= counts[j];
  }
  ActionGrid grid;
  grid.dim_ = dim;
  grid.points_.resize(total * dim);
  // Last axis varies fastest, which yields lexicographic order.
  for (std::size_t p = 0; p < total; ++p) {
    std::size_t rem = p;
    for (std::size_t j = dim; j-- > 0;) {
      const std::size_t idx = rem % counts[j];
      rem /= counts[j];
      const double step = counts[j] > 1
                              ? (upper[j] - lower[j]) / static_cast<double>(counts[j] - 1)
                              : 0.0;
      grid.points_[p * dim + j] = idx + 1 == counts[j] ? upper[j] : lower[j] + step * idx;
    }
  }
  grid.lower_ = std::move(lower);
  grid.upper_ = std::move(upper);
  grid.counts_ = std::move(counts);
  return grid;
}

ActionGrid ActionGrid::from_points(std::size_t dim, std::vector<double> points) {
  if (dim == 0 || points.empty() || points.size() % dim != 0) {
    throw std::invalid_argument("action grid: needs a nonempty list of points of equal dimension");
  }
  const std::size_t n = points.size() / dim;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(points.begin() + a * dim, points.begin() + (a + 1) * dim,
                                        points.begin() + b * dim, points.begin() + (b + 1) * dim);
  });
  ActionGrid grid;
  grid.dim_ = dim;
  grid.lower_.assign(dim, std::numeric_limits<double>::infinity());
  grid.upper_.assign(dim, -std::numeric_limits<double>::infinity());
  for (std::size_t p : order) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = points[p * dim + j];
      grid.points_.push_back(v);
      grid.lower_[j] = std::min(grid.lower_[j], v);
      grid.upper_[j] = std::max(grid.upper_[j], v);
    }
  }
  return grid;
}

double ActionGrid::resolution() const {
  const std::size_t n = size();
  if (n < 2) return 0.0;
  double worst = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < n; ++b) {
      if (a != b) nearest = std::min(nearest, distance(point(a), point(b)));
    }
    worst = std::max(worst, nearest);
  }
  return worst;
}

void ActionGrid::clamp(std::span<double> action) const {
  for (std::size_t j = 0; j < dim_; ++j) {
    action[j] = std::clamp(action[j], lower_[j], upper_[j]);
  }
}

void ActionGrid::project(std::span<double> action) const {
  if (!counts_.empty()) {
    clamp(action);
    return;
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < size(); ++j) {
    const double d = distance(point(j), action);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  const auto p = point(best);
  std::copy(p.begin(), p.end(), action.begin());
}

double ActionGrid::distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(s);
}

// ------------------------------------------------------------------ scenario

std::optional<std::size_t> Scenario::find_statistic(const std::string& stat_name) const {
  for (std::size_t j = 0; j < statistics.size(); ++j) {
    if (statistics[j].name == stat_name) return j;
  }
  return std::nullopt;
}

void Scenario::evaluate_statistics(std::span<const double> x, std::span<double> out) const {
  for (std::size_t j = 0; j < statistics.size(); ++j) out[j] = statistics[j](x);
}

void Scenario::drift_at(std::span<const double> x, std::span<const double> m,
                        std::span<const double> u, std::span<const double> v,
                        std::span<double> out) const {
  for (std::size_t r = 0; r < dim; ++r) {
    double acc = drift.offset[r];
    for (std::size_t c = 0; c < dim; ++c) acc += drift.state(r, c) * x[c];
    for (const auto& term : drift.mean_field) acc += term.weights[r] * m[term.index];
    for (std::size_t c = 0; c < drift.control_u.cols; ++c) acc += drift.control_u(r, c) * u[c];
    for (std::size_t c = 0; c < drift.control_v.cols && c < v.size(); ++c) {
      acc += drift.control_v(r, c) * v[c];
    }
    if (drift.saturation) acc = *drift.saturation * std::tanh(acc / *drift.saturation);
    out[r] = acc;
  }
}

double Scenario::running_cost_at(std::span<const double> x, std::span<const double> m,
                                 std::span<const double> u, std::span<const double> v) const {
  const auto& h = running_cost;
  double acc = h.constant;
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    uu += u[j] * u[j];
    acc += h.u_linear[j] * u[j];
  }
  for (std::size_t j = 0; j < v.size(); ++j) {
    vv += v[j] * v[j];
    acc += h.v_linear[j] * v[j];
    if (j < u.size()) uv += u[j] * v[j];
  }
  acc += h.u_quadratic * uu + h.v_quadratic * vv + h.uv_cross * uv;
  for (const auto& term : h.state_terms) acc += term.weight * statistics[term.index](x);
  for (const auto& term : h.mean_terms) acc += term.weight * m[term.index];
  return acc;
}

double Scenario::terminal_cost_at(std::span<const double> x, std::span<const double> m) const {
  const auto& g = terminal_cost;
  double acc = g.constant;
  for (std::size_t j = 0; j < g.coefficients.size(); ++j) acc += g.coefficients[j] * x[j];
  for (const auto& term : g.state_terms) acc += term.weight * statistics[term.index](x);
  for (const auto& term : g.mean_terms) acc += term.weight * m[term.index];
  if (g.kind == TerminalCostSpec::Kind::variance) {
    const double phi = statistics[g.variance_index](x);
    const double mean = m[g.variance_index];
    acc += phi * phi - mean * mean;
  }
  return acc;
}

bool Scenario::drift_depends_on_measure() const {
  return std::any_of(drift.mean_field.begin(), drift.mean_field.end(), [](const MeanFieldTerm& t) {
    return std::any_of(t.weights.begin(), t.weights.end(), [](double w) { return w != 0.0; });
  });
}

bool Scenario::costs_depend_on_measure() const {
  return std::any_of(running_cost.mean_terms.begin(), running_cost.mean_terms.end(),
                     [](const WeightedStatistic& t) { return t.weight != 0.0; });
}

bool Scenario::terminal_depends_on_measure() const {
  return terminal_cost.kind == TerminalCostSpec::Kind::variance ||
         std::any_of(terminal_cost.mean_terms.begin(), terminal_cost.mean_terms.end(),
                     [](const WeightedStatistic& t) { return t.weight != 0.0; });
}

// ------------------------------------------------------------------- parsing

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ScenarioError(path + ": " + what);
}

std::string child(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string item(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

void reject_unknown(const json& obj, const std::string& path,
                    std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      fail(child(path, key), "unknown field");
    }
  }
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key)) fail(child(path, key), "missing required field");
  return obj.at(key);
}

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

std::size_t as_count(const json& v, const std::string& path) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) fail(path, "expected an integer");
  const auto n = v.get<long long>();
  if (n < 0) fail(path, "expected a non-negative integer");
  return static_cast<std::size_t>(n);
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

double number_or(const json& obj, const std::string& key, const std::string& path, double dflt) {
  return obj.contains(key) ? as_number(obj.at(key), child(path, key)) : dflt;
}

/// A vector of `n` numbers; a bare number is accepted when n == 1.
std::vector<double> as_vector(const json& v, const std::string& path, std::size_t n) {
  if (v.is_number() && n == 1) return {v.get<double>()};
  if (!v.is_array()) fail(path, "expected an array of numbers");
  if (v.size() != n) {
    fail(path, "expected " + std::to_string(n) + " entries, got " + std::to_string(v.size()));
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], item(path, i)));
  return out;
}

/// rows x cols matrix as nested arrays; a bare number is accepted for 1x1.
Matrix as_matrix(const json& v, const std::string& path, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  if (v.is_number() && rows == 1 && cols == 1) {
    m(0, 0) = v.get<double>();
    return m;
  }
  if (!v.is_array() || v.size() != rows) {
    fail(path, "expected a " + std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = as_vector(v[r], item(path, r), cols);
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c];
  }
  return m;
}

std::size_t resolve_statistic(const Scenario& s, const std::string& stat_name,
                              const std::string& path) {
  const auto idx = s.find_statistic(stat_name);
  if (!idx) fail(path, "unregistered statistic '" + stat_name + "'");
  return *idx;
}

std::vector<WeightedStatistic> parse_weighted(const json& v, const std::string& path,
                                              const Scenario& s) {
  if (!v.is_array()) fail(path, "expected an array");
  std::vector<WeightedStatistic> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto p = item(path, i);
    reject_unknown(v[i], p, {"statistic", "weight"});
    WeightedStatistic w;
    w.statistic = as_string(require(v[i], "statistic", p), child(p, "statistic"));
    w.weight = as_number(require(v[i], "weight", p), child(p, "weight"));
    w.index = resolve_statistic(s, w.statistic, child(p, "statistic"));
    out.push_back(w);
  }
  return out;
}

DiffusionSpec parse_diffusion(const json& v, const std::string& path, std::size_t dim) {
  reject_unknown(v, path, {"kind", "matrix", "offset", "slope", "alpha"});
  DiffusionSpec d = DiffusionSpec::identity(dim);
  const std::string kind = v.contains("kind") ? as_string(v.at("kind"), child(path, "kind"))
                                              : std::string("constant");
  if (kind == "constant") {
    d.kind = DiffusionSpec::Kind::constant;
  } else if (kind == "affine_state") {
    d.kind = DiffusionSpec::Kind::affine_state;
  } else if (kind == "sup_modulated") {
    d.kind = DiffusionSpec::Kind::sup_modulated;
  } else {
    fail(child(path, "kind"), "unknown diffusion kind '" + kind +
                                  "' (expected constant, affine_state, sup_modulated)");
  }
  if (v.contains("matrix")) {
    const Matrix m = as_matrix(v.at("matrix"), child(path, "matrix"), dim, dim);
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t c = 0; c < dim; ++c)
        d.base(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m(r, c);
  }
  d.scale_offset = number_or(v, "offset", path, 1.0);
  d.scale_slope = number_or(v, "slope", path, 0.0);
  d.alpha = number_or(v, "alpha", path, 0.0);
  if (d.kind == DiffusionSpec::Kind::constant && (d.scale_offset != 1.0 || d.scale_slope != 0.0)) {
    fail(path, "offset/slope apply only to affine_state and sup_modulated diffusions");
  }
  return d;
}

StatisticSpec parse_statistic(const json& v, const std::string& path, std::size_t dim) {
  reject_unknown(v, path, {"name", "kind", "component", "scale", "lower", "upper"});
  StatisticSpec s;
  s.name = as_string(require(v, "name", path), child(path, "name"));
  const std::string kind = as_string(require(v, "kind", path), child(path, "kind"));
  if (kind == "identity") {
    s.kind = StatisticSpec::Kind::identity;
  } else if (kind == "tanh") {
    s.kind = StatisticSpec::Kind::tanh;
  } else if (kind == "square") {
    s.kind = StatisticSpec::Kind::square;
  } else if (kind == "indicator_bin") {
    s.kind = StatisticSpec::Kind::indicator_bin;
  } else {
    fail(child(path, "kind"), "unknown statistic kind '" + kind +
                                  "' (expected identity, tanh, square, indicator_bin)");
  }
  s.component = v.contains("component") ? as_count(v.at("component"), child(path, "component")) : 0;
  if (s.component >= dim) fail(child(path, "component"), "component exceeds dimension");
  s.scale = number_or(v, "scale", path, 1.0);
  if (!(s.scale > 0.0)) fail(child(path, "scale"), "scale must be positive");
  s.lower = number_or(v, "lower", path, 0.0);
  s.upper = number_or(v, "upper", path, 0.0);
  if (s.kind == StatisticSpec::Kind::indicator_bin && !(s.upper > s.lower)) {
    fail(path, "indicator_bin needs lower < upper");
  }
  return s;
}

ActionGrid parse_actions(const json& v, const std::string& path) {
  if (!v.is_object()) fail(path, "expected an object");
  try {
    if (v.contains("values")) {
      reject_unknown(v, path, {"values"});
      const json& vals = v.at("values");
      if (!vals.is_array() || vals.empty()) fail(child(path, "values"), "expected a nonempty array");
      const std::size_t dim = vals[0].is_array() ? vals[0].size() : 1;
      std::vector<double> pts;
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const auto p = as_vector(vals[i], item(child(path, "values"), i), dim);
        pts.insert(pts.end(), p.begin(), p.end());
      }
      return ActionGrid::from_points(dim, std::move(pts));
    }
    reject_unknown(v, path, {"lower", "upper", "points"});
    const json& lo = require(v, "lower", path);
    const std::size_t dim = lo.is_array() ? lo.size() : 1;
    auto lower = as_vector(lo, child(path, "lower"), dim);
    auto upper = as_vector(require(v, "upper", path), child(path, "upper"), dim);
    std::vector<std::size_t> counts;
    const json& pts = require(v, "points", path);
    if (pts.is_array()) {
      if (pts.size() != dim) fail(child(path, "points"), "expected one count per axis");
      for (std::size_t i = 0; i < dim; ++i) counts.push_back(as_count(pts[i], item(child(path, "points"), i)));
    } else {
      counts.assign(dim, as_count(pts, child(path, "points")));
    }
    return ActionGrid::uniform(std::move(lower), std::move(upper), std::move(counts));
  } catch (const ScenarioError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
}

json actions_to_json(const ActionGrid& g) {
  if (!g.counts().empty()) {
    return json{{"lower", g.lower()}, {"upper", g.upper()}, {"points", g.counts()}};
  }
  json vals = json::array();
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto pt = g.point(p);
    vals.push_back(std::vector<double>(pt.begin(), pt.end()));
  }
  return json{{"values", vals}};
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    rows.push_back(std::vector<double>(m.data.begin() + r * m.cols, m.data.begin() + (r + 1) * m.cols));
  }
  return rows;
}

json weighted_to_json(const std::vector<WeightedStatistic>& terms) {
  json out = json::array();
  for (const auto& t : terms) out.push_back({{"statistic", t.statistic}, {"weight", t.weight}});
  return out;
}

const char* statistic_kind_name(StatisticSpec::Kind k) {
  switch (k) {
    case StatisticSpec::Kind::identity: return "identity";
    case StatisticSpec::Kind::tanh: return "tanh";
    case StatisticSpec::Kind::square: return "square";
    case StatisticSpec::Kind::indicator_bin: return "indicator_bin";
  }
  return "identity";
}

const char* diffusion_kind_name(DiffusionSpec::Kind k) {
  switch (k) {
    case DiffusionSpec::Kind::constant: return "constant";
    case DiffusionSpec::Kind::affine_state: return "affine_state";
    case DiffusionSpec::Kind::sup_modulated: return "sup_modulated";
  }
  return "constant";
}

}  // namespace

Scenario parse_scenario(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ScenarioError(std::string("<document>: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) fail("<document>", "expected a JSON object");
  reject_unknown(doc, "", {"name", "dimension", "initial_point", "horizon", "steps", "diffusion",
                           "statistics", "drift", "running_cost", "terminal_cost", "actions_u",
                           "actions_v"});

  Scenario s;
  s.name = doc.contains("name") ? as_string(doc.at("name"), "name") : std::string("custom");
  s.dim = as_count(require(doc, "dimension", ""), "dimension");
  if (s.dim < 1) fail("dimension", "must be >= 1");
  s.initial_point = doc.contains("initial_point")
                        ? as_vector(doc.at("initial_point"), "initial_point", s.dim)
                        : std::vector<double>(s.dim, 0.0);
  s.horizon = number_or(doc, "horizon", "", 1.0);
  if (!(s.horizon > 0.0)) fail("horizon", "must be positive");
  s.steps = doc.contains("steps") ? as_count(doc.at("steps"), "steps") : 50;
  if (s.steps < 1) fail("steps", "must be >= 1");

  s.diffusion = doc.contains("diffusion") ? parse_diffusion(doc.at("diffusion"), "diffusion", s.dim)
                                          : DiffusionSpec::identity(s.dim);

  if (doc.contains("statistics")) {
    const json& stats = doc.at("statistics");
    if (!stats.is_array()) fail("statistics", "expected an array");
    for (std::size_t i = 0; i < stats.size(); ++i) {
      auto st = parse_statistic(stats[i], item("statistics", i), s.dim);
      if (s.find_statistic(st.name)) fail(item("statistics", i) + ".name", "duplicate statistic name");
      s.statistics.push_back(std::move(st));
    }
  }

  s.actions_u = parse_actions(require(doc, "actions_u", ""), "actions_u");
  if (doc.contains("actions_v")) s.actions_v = parse_actions(doc.at("actions_v"), "actions_v");
  const std::size_t du = s.u_dim();
  const std::size_t dv = s.v_dim();

  // drift
  s.drift.state = Matrix(s.dim, s.dim);
  s.drift.control_u = Matrix(s.dim, du);
  s.drift.control_v = Matrix(s.dim, dv);
  s.drift.offset.assign(s.dim, 0.0);
  if (doc.contains("drift")) {
    const json& f = doc.at("drift");
    const std::string p = "drift";
    reject_unknown(f, p, {"state", "mean_field", "control_u", "control_v", "offset", "saturation"});
    if (f.contains("state")) s.drift.state = as_matrix(f.at("state"), child(p, "state"), s.dim, s.dim);
    if (f.contains("control_u")) {
      s.drift.control_u = as_matrix(f.at("control_u"), child(p, "control_u"), s.dim, du);
    }
    if (f.contains("control_v")) {
      if (!s.is_game()) fail(child(p, "control_v"), "requires actions_v");
      s.drift.control_v = as_matrix(f.at("control_v"), child(p, "control_v"), s.dim, dv);
    }
    if (f.contains("offset")) s.drift.offset = as_vector(f.at("offset"), child(p, "offset"), s.dim);
    if (f.contains("saturation") && !f.at("saturation").is_null()) {
      const double sat = as_number(f.at("saturation"), child(p, "saturation"));
      if (!(sat > 0.0)) fail(child(p, "saturation"), "must be positive");
      s.drift.saturation = sat;
    }
    if (f.contains("mean_field")) {
      const json& mf = f.at("mean_field");
      const auto mp = child(p, "mean_field");
      if (!mf.is_array()) fail(mp, "expected an array");
      for (std::size_t i = 0; i < mf.size(); ++i) {
        const auto ip = item(mp, i);
        reject_unknown(mf[i], ip, {"statistic", "weights"});
        MeanFieldTerm t;
        t.statistic = as_string(require(mf[i], "statistic", ip), child(ip, "statistic"));
        t.index = resolve_statistic(s, t.statistic, child(ip, "statistic"));
        t.weights = as_vector(require(mf[i], "weights", ip), child(ip, "weights"), s.dim);
        s.drift.mean_field.push_back(std::move(t));
      }
    }
  }

  // running cost
  auto& h = s.running_cost;
  h.u_linear.assign(du, 0.0);
  h.v_linear.assign(dv, 0.0);
  if (doc.contains("running_cost")) {
    const json& hc = doc.at("running_cost");
    const std::string p = "running_cost";
    reject_unknown(hc, p, {"u_quadratic", "v_quadratic", "uv_cross", "u_linear", "v_linear",
                           "state_terms", "mean_terms", "constant"});
    h.u_quadratic = number_or(hc, "u_quadratic", p, 0.0);
    h.v_quadratic = number_or(hc, "v_quadratic", p, 0.0);
    h.uv_cross = number_or(hc, "uv_cross", p, 0.0);
    if (!s.is_game() && (h.v_quadratic != 0.0 || h.uv_cross != 0.0)) {
      fail(p, "v terms require actions_v");
    }
    if (s.is_game() && h.uv_cross != 0.0 && du != dv) {
      fail(child(p, "uv_cross"), "requires equal action dimensions");
    }
    if (hc.contains("u_linear")) h.u_linear = as_vector(hc.at("u_linear"), child(p, "u_linear"), du);
    if (hc.contains("v_linear")) {
      if (!s.is_game()) fail(child(p, "v_linear"), "requires actions_v");
      h.v_linear = as_vector(hc.at("v_linear"), child(p, "v_linear"), dv);
    }
    if (hc.contains("state_terms")) h.state_terms = parse_weighted(hc.at("state_terms"), child(p, "state_terms"), s);
    if (hc.contains("mean_terms")) h.mean_terms = parse_weighted(hc.at("mean_terms"), child(p, "mean_terms"), s);
    h.constant = number_or(hc, "constant", p, 0.0);
  }

  // terminal cost
  {
    const std::string p = "terminal_cost";
    const json& gc = require(doc, "terminal_cost", "");
    reject_unknown(gc, p, {"kind", "coefficients", "state_terms", "mean_terms", "statistic", "constant"});
    auto& g = s.terminal_cost;
    const std::string kind = as_string(require(gc, "kind", p), child(p, "kind"));
    g.coefficients.assign(s.dim, 0.0);
    if (kind == "linear") {
      g.kind = TerminalCostSpec::Kind::linear;
      if (gc.contains("coefficients")) {
        g.coefficients = as_vector(gc.at("coefficients"), child(p, "coefficients"), s.dim);
      }
      if (gc.contains("state_terms")) fail(child(p, "state_terms"), "not allowed for kind 'linear'");
    } else if (kind == "bounded") {
      g.kind = TerminalCostSpec::Kind::bounded;
      if (gc.contains("coefficients")) fail(child(p, "coefficients"), "not allowed for kind 'bounded'");
      if (gc.contains("state_terms")) g.state_terms = parse_weighted(gc.at("state_terms"), child(p, "state_terms"), s);
    } else if (kind == "variance") {
      g.kind = TerminalCostSpec::Kind::variance;
      if (gc.contains("coefficients")) fail(child(p, "coefficients"), "not allowed for kind 'variance'");
      if (gc.contains("state_terms")) fail(child(p, "state_terms"), "not allowed for kind 'variance'");
      g.variance_statistic = as_string(require(gc, "statistic", p), child(p, "statistic"));
      g.variance_index = resolve_statistic(s, g.variance_statistic, child(p, "statistic"));
    } else {
      fail(child(p, "kind"), "unknown terminal kind '" + kind + "' (expected linear, bounded, variance)");
    }
    if (kind != "variance" && gc.contains("statistic")) fail(child(p, "statistic"), "only for kind 'variance'");
    if (gc.contains("mean_terms")) g.mean_terms = parse_weighted(gc.at("mean_terms"), child(p, "mean_terms"), s);
    g.constant = number_or(gc, "constant", p, 0.0);
  }
  return s;
}

std::string serialize_scenario(const Scenario& s) {
  json doc;
  doc["name"] = s.name;
  doc["dimension"] = s.dim;
  doc["initial_point"] = s.initial_point;
  doc["horizon"] = s.horizon;
  doc["steps"] = s.steps;

  json diff;
  diff["kind"] = diffusion_kind_name(s.diffusion.kind);
  json rows = json::array();
  for (Eigen::Index r = 0; r < s.diffusion.base.rows(); ++r) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < s.diffusion.base.cols(); ++c) row.push_back(s.diffusion.base(r, c));
    rows.push_back(row);
  }
  diff["matrix"] = rows;
  if (s.diffusion.kind != DiffusionSpec::Kind::constant) {
    diff["offset"] = s.diffusion.scale_offset;
    diff["slope"] = s.diffusion.scale_slope;
  }
  diff["alpha"] = s.diffusion.alpha;
  doc["diffusion"] = diff;

  json stats = json::array();
  for (const auto& st : s.statistics) {
    json j{{"name", st.name}, {"kind", statistic_kind_name(st.kind)}, {"component", st.component}};
    if (st.kind == StatisticSpec::Kind::tanh) j["scale"] = st.scale;
    if (st.kind == StatisticSpec::Kind::indicator_bin) {
      j["lower"] = st.lower;
      j["upper"] = st.upper;
    }
    stats.push_back(j);
  }
  doc["statistics"] = stats;

  json f;
  f["state"] = matrix_to_json(s.drift.state);
  json mf = json::array();
  for (const auto& t : s.drift.mean_field) mf.push_back({{"statistic", t.statistic}, {"weights", t.weights}});
  f["mean_field"] = mf;
  f["control_u"] = matrix_to_json(s.drift.control_u);
  if (s.is_game()) f["control_v"] = matrix_to_json(s.drift.control_v);
  f["offset"] = s.drift.offset;
  f["saturation"] = s.drift.saturation ? json(*s.drift.saturation) : json(nullptr);
  doc["drift"] = f;

  const auto& h = s.running_cost;
  json hc{{"u_quadratic", h.u_quadratic}, {"u_linear", h.u_linear},
          {"state_terms", weighted_to_json(h.state_terms)},
          {"mean_terms", weighted_to_json(h.mean_terms)}, {"constant", h.constant}};
  if (s.is_game()) {
    hc["v_quadratic"] = h.v_quadratic;
    hc["uv_cross"] = h.uv_cross;
    hc["v_linear"] = h.v_linear;
  }
  doc["running_cost"] = hc;

  const auto& g = s.terminal_cost;
  json gc;
  switch (g.kind) {
    case TerminalCostSpec::Kind::linear:
      gc["kind"] = "linear";
      gc["coefficients"] = g.coefficients;
      break;
    case TerminalCostSpec::Kind::bounded:
      gc["kind"] = "bounded";
      gc["state_terms"] = weighted_to_json(g.state_terms);
      break;
    case TerminalCostSpec::Kind::variance:
      gc["kind"] = "variance";
      gc["statistic"] = g.variance_statistic;
      break;
  }
  gc["mean_terms"] = weighted_to_json(g.mean_terms);
  gc["constant"] = g.constant;
  doc["terminal_cost"] = gc;

  doc["actions_u"] = actions_to_json(s.actions_u);
  if (s.actions_v) doc["actions_v"] = actions_to_json(*s.actions_v);
  return doc.dump(2);
}

// ---------------------------------------------------------------- validation

const char* to_string(AssumptionStatus status) {
  switch (status) {
    case AssumptionStatus::certified: return "certified";
    case AssumptionStatus::not_certified: return "not-certified";
    case AssumptionStatus::violated: return "violated";
  }
  return "not-certified";
}

const AssumptionCheck& ValidationReport::get(const std::string& id) const {
  for (const auto& c : checks) {
    if (c.id == id) return c;
  }
  throw std::out_of_range("validation report has no entry " + id);
}

bool ValidationReport::has_violation() const {
  return std::any_of(checks.begin(), checks.end(),
                     [](const AssumptionCheck& c) { return c.status == AssumptionStatus::violated; });
}

std::vector<std::string> ValidationReport::caveats() const {
  std::vector<std::string> out;
  for (const auto& c : checks) {
    if (c.status != AssumptionStatus::certified) {
      out.push_back("assumption " + c.id + " " + to_string(c.status) + ": " + c.reason);
    }
  }
  return out;
}

namespace {

struct Names {
  std::vector<std::string> unbounded;
  void note(const StatisticSpec& st) {
    if (!st.bounded() && std::find(unbounded.begin(), unbounded.end(), st.name) == unbounded.end()) {
      unbounded.push_back(st.name);
    }
  }
};

AssumptionCheck check(std::string id, bool ok, std::string ok_reason, std::string bad_reason,
                      AssumptionStatus bad = AssumptionStatus::not_certified) {
  return {std::move(id), ok ? AssumptionStatus::certified : bad, ok ? std::move(ok_reason) : std::move(bad_reason)};
}

}  // namespace

ValidationReport validate_scenario(const Scenario& s) {
  ValidationReport report;
  report.alpha = s.diffusion.alpha;
  const auto& d = s.diffusion;
  const bool state_dependent = d.kind != DiffusionSpec::Kind::constant && d.scale_slope != 0.0;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(d.base);
  const bool base_invertible = lu.isInvertible();
  const double min_scale = d.kind == DiffusionSpec::Kind::constant ? 1.0 : d.scale_offset;
  const bool scale_positive = min_scale > 0.0 && (d.kind == DiffusionSpec::Kind::constant || d.scale_slope >= 0.0);

  report.checks.push_back({"A1", AssumptionStatus::certified,
                           "sigma depends on (t, x_t, |x|_t) only, hence progressively measurable"});
  report.checks.push_back({"A2(a)", AssumptionStatus::certified,
                           state_dependent ? "scalar modulation is Lipschitz in |w - w'|_t"
                                           : "sigma is constant"});
  if (!base_invertible) {
    report.checks.push_back({"A2(b)", AssumptionStatus::violated, "diffusion base matrix is singular"});
  } else if (!scale_positive) {
    report.checks.push_back({"A2(b)", AssumptionStatus::violated,
                             "diffusion scale offset + slope * |x| reaches zero"});
  } else {
    report.checks.push_back({"A2(b)", AssumptionStatus::certified,
                             "sigma^{-1} bounded by |S^{-1}| / offset (alpha = " +
                                 std::to_string(d.alpha) + ")"});
  }
  report.checks.push_back({"A2(c)", AssumptionStatus::certified, "sigma has linear growth"});

  Names names;
  bool drift_stats_bounded = true;
  for (const auto& t : s.drift.mean_field) {
    const auto& st = s.statistics[t.index];
    if (!st.bounded()) {
      drift_stats_bounded = false;
      names.note(st);
    }
  }
  report.checks.push_back({"A3", AssumptionStatus::certified, "drift is a registry function of (x_t, m_t, u_t)"});
  report.checks.push_back(check("A4", drift_stats_bounded,
                                "drift depends on the law only through bounded statistics",
                                "drift uses an unbounded statistic; Lipschitz continuity in total variation not certified"));
  report.checks.push_back({"A5", AssumptionStatus::certified,
                           s.drift.saturation ? "saturated drift is bounded" : "affine drift has linear growth"});
  report.checks.push_back(check("A6", !state_dependent && base_invertible,
                                "sigma and sigma^{-1} are bounded",
                                "sigma is state dependent and unbounded"));

  // Law dependence of h and g.
  bool cost_stats_bounded = true;
  for (const auto& t : s.running_cost.mean_terms) {
    if (!s.statistics[t.index].bounded()) {
      cost_stats_bounded = false;
      names.note(s.statistics[t.index]);
    }
  }
  for (const auto& t : s.terminal_cost.mean_terms) {
    if (!s.statistics[t.index].bounded()) {
      cost_stats_bounded = false;
      names.note(s.statistics[t.index]);
    }
  }
  const bool variance = s.terminal_cost.kind == TerminalCostSpec::Kind::variance;
  if (variance && !s.statistics[s.terminal_cost.variance_index].bounded()) {
    cost_stats_bounded = false;
    names.note(s.statistics[s.terminal_cost.variance_index]);
  }

  bool h_bounded = true;
  for (const auto& t : s.running_cost.state_terms) {
    if (!s.statistics[t.index].bounded()) {
      h_bounded = false;
      names.note(s.statistics[t.index]);
    }
  }
  bool g_bounded = cost_stats_bounded;
  if (s.terminal_cost.kind == TerminalCostSpec::Kind::linear) {
    g_bounded = g_bounded && std::all_of(s.terminal_cost.coefficients.begin(),
                                         s.terminal_cost.coefficients.end(),
                                         [](double c) { return c == 0.0; });
  }
  for (const auto& t : s.terminal_cost.state_terms) {
    if (!s.statistics[t.index].bounded()) {
      g_bounded = false;
      names.note(s.statistics[t.index]);
    }
  }

  const bool lipschitz = drift_stats_bounded && cost_stats_bounded;
  const std::string family = s.is_game() ? "C" : "B";
  report.checks.push_back({family + "1", AssumptionStatus::certified,
                           "f, h are registry functions of (x_t, m_t, actions); g of (x_T, m_T)"});
  report.checks.push_back(check(family + "2", lipschitz,
                                "f, h, g are Lipschitz in the law (bounded statistics) and in the actions (compact grid)",
                                "an unbounded statistic enters f, h or g through the law"));
  report.checks.push_back({family + "3", AssumptionStatus::certified,
                           s.drift.saturation ? "saturated drift is bounded" : "affine drift has linear growth"});
  std::string unbounded_reason;
  if (!h_bounded) unbounded_reason += "h has an unbounded state term; ";
  if (!g_bounded) unbounded_reason += "g is unbounded; ";
  if (!unbounded_reason.empty()) unbounded_reason += "Monte Carlo oracles still apply at desk scale";
  report.checks.push_back(check(family + "4", h_bounded && g_bounded,
                                "h and g are bounded (actions range over a compact grid)",
                                unbounded_reason));

  if (s.actions_u.empty() || (s.actions_v && s.actions_v->empty())) {
    report.checks.push_back({"U", AssumptionStatus::violated, "action set is empty"});
  }
  report.unbounded_statistics = names.unbounded;
  return report;
}

// ----------------------------------------------------------------- built-ins

namespace {

const char* kBuiltins[] = {
    R"({
  "name": "zero-drift",
  "dimension": 1, "initial_point": [0.0], "horizon": 1.0, "steps": 50,
  "statistics": [{"name": "bounded", "kind": "tanh", "component": 0, "scale": 1.0}],
  "terminal_cost": {"kind": "bounded", "state_terms": [{"statistic": "bounded", "weight": 1.0}]},
  "actions_u": {"lower": [-1.0], "upper": [1.0], "points": [21]}
})",
    R"({
  "name": "linear-quadratic",
  "dimension": 1, "initial_point": [0.0], "horizon": 1.0, "steps": 50,
  "drift": {"control_u": [[1.0]]},
  "running_cost": {"u_quadratic": 0.5},
  "terminal_cost": {"kind": "linear", "coefficients": [1.0]},
  "actions_u": {"lower": [-1.0], "upper": [1.0], "points": [21]}
})",
    R"({
  "name": "mean-field-mean-reversion",
  "dimension": 1, "initial_point": [0.0], "horizon": 1.0, "steps": 50,
  "statistics": [{"name": "mean", "kind": "identity", "component": 0}],
  "drift": {"state": [[-0.5]], "mean_field": [{"statistic": "mean", "weights": [0.5]}],
            "control_u": [[1.0]]},
  "running_cost": {"u_quadratic": 0.5},
  "terminal_cost": {"kind": "linear", "coefficients": [2.0]},
  "actions_u": {"lower": [-1.0], "upper": [1.0], "points": [21]}
})",
    R"({
  "name": "variance",
  "dimension": 1, "initial_point": [0.0], "horizon": 1.0, "steps": 50,
  "statistics": [{"name": "phi", "kind": "identity", "component": 0}],
  "drift": {"control_u": [[1.0]]},
  "terminal_cost": {"kind": "variance", "statistic": "phi"},
  "actions_u": {"lower": [-1.0], "upper": [1.0], "points": [21]}
})",
    R"({
  "name": "separated-game",
  "dimension": 1, "initial_point": [0.0], "horizon": 1.0, "steps": 50,
  "drift": {"control_u": [[1.0]], "control_v": [[1.0]]},
  "running_cost": {"u_quadratic": 0.5, "v_quadratic": -0.5},
  "terminal_cost": {"kind": "linear", "coefficients": [1.0]},
  "actions_u": {"lower": [-1.0], "upper": [1.0], "points": [21]},
  "actions_v": {"lower": [-1.0], "upper": [1.0], "points": [21]}
})",
    R"({
  "name": "bilinear-game",
  "dimension": 1, "initial_point": [0.0], "horizon": 1.0, "steps": 50,
  "running_cost": {"uv_cross": 1.0},
  "terminal_cost": {"kind": "linear", "coefficients": [1.0]},
  "actions_u": {"values": [[-1.0], [1.0]]},
  "actions_v": {"values": [[-1.0], [1.0]]}
})",
};

}  // namespace

std::vector<Scenario> builtin_scenarios() {
  std::vector<Scenario> out;
  for (const char* doc : kBuiltins) out.push_back(parse_scenario(doc));
  return out;
}

std::vector<std::string> builtin_names() {
  std::vector<std::string> names;
  for (const auto& s : builtin_scenarios()) names.push_back(s.name);
  return names;
}

Scenario builtin_scenario(const std::string& name) {
  for (auto& s : builtin_scenarios()) {
    if (s.name == name) return s;
  }
  std::string list;
  for (const auto& n : builtin_names()) list += (list.empty() ? "" : ", ") + n;
  throw ScenarioError("scenario: unknown built-in '" + name + "' (available: " + list + ")");
}

}  // namespace mfc
