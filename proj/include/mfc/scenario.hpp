#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfc/core.hpp"

namespace mfc {

/// Raised by parse_scenario; the message starts with a path into the
/// config document ("drift.mean_field[0].statistic: ...").
class ScenarioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix used for the affine drift coefficients.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool is_zero() const;

  bool operator==(const Matrix&) const = default;
};

/// A registered statistic psi: R^d -> R, used through m_t = E^Q[psi(x_t)].
struct StatisticSpec {
  enum class Kind { identity, tanh, square, indicator_bin };

  std::string name;
  Kind kind = Kind::identity;
  std::size_t component = 0;
  double scale = 1.0;  // tanh(x / scale)
  double lower = 0.0;  // indicator of [lower, upper)
  double upper = 0.0;

  double operator()(std::span<const double> x) const;
  bool bounded() const;
  /// sup |psi|, when bounded.
  std::optional<double> sup_norm() const;
  /// Global Lipschitz constant, when one exists.
  std::optional<double> lipschitz() const;

  bool operator==(const StatisticSpec&) const = default;
};

struct WeightedStatistic {
  std::string statistic;
  double weight = 0.0;
  std::size_t index = 0;  // resolved position in the scenario's registry

  bool operator==(const WeightedStatistic&) const = default;
};

/// Column of the mean-field coefficient: contributes weights * m_j.
struct MeanFieldTerm {
  std::string statistic;
  std::vector<double> weights;
  std::size_t index = 0;

  bool operator==(const MeanFieldTerm&) const = default;
};

/// f = state * x + sum_j weights_j m_j + control_u * u + control_v * v + offset,
/// optionally passed through saturation * tanh(. / saturation) componentwise.
struct DriftSpec {
  Matrix state;
  std::vector<MeanFieldTerm> mean_field;
  Matrix control_u;
  Matrix control_v;
  std::vector<double> offset;
  std::optional<double> saturation;

  bool operator==(const DriftSpec&) const = default;
};

/// h = qu |u|^2 + qv |v|^2 + quv u.v + lu.u + lv.v
///     + sum w psi(x) + sum w m + constant
struct RunningCostSpec {
  double u_quadratic = 0.0;
  double v_quadratic = 0.0;
  double uv_cross = 0.0;
  std::vector<double> u_linear;
  std::vector<double> v_linear;
  std::vector<WeightedStatistic> state_terms;
  std::vector<WeightedStatistic> mean_terms;
  double constant = 0.0;

  bool operator==(const RunningCostSpec&) const = default;
};

/// linear:   g = constant + coefficients . x + sum w m
/// bounded:  g = constant + sum w psi(x) + sum w m
/// variance: g = psi(x)^2 - (E psi)^2 + constant
struct TerminalCostSpec {
  enum class Kind { linear, bounded, variance };

  Kind kind = Kind::linear;
  std::vector<double> coefficients;
  std::vector<WeightedStatistic> state_terms;
  std::vector<WeightedStatistic> mean_terms;
  std::string variance_statistic;
  std::size_t variance_index = 0;
  double constant = 0.0;

  bool operator==(const TerminalCostSpec&) const = default;
};

/// Finite action set in R^{d_u}, kept in lexicographic order so that a
/// first-found strict minimum is the lexicographically smallest argmin.
class ActionGrid {
 public:
  ActionGrid() = default;

  /// Tensor grid with counts[j] equally spaced points on [lower_j, upper_j].
  static ActionGrid uniform(std::vector<double> lower, std::vector<double> upper,
                            std::vector<std::size_t> counts);
  static ActionGrid from_points(std::size_t dim, std::vector<double> points);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : points_.size() / dim_; }
  bool empty() const { return size() == 0; }
  std::span<const double> point(std::size_t j) const {
    return {points_.data() + j * dim_, dim_};
  }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  /// Per-axis point counts for uniform grids; empty for explicit point lists.
  const std::vector<std::size_t>& counts() const { return counts_; }
  const std::vector<double>& raw_points() const { return points_; }

  /// Largest nearest-neighbour distance between grid points (0 for one point).
  double resolution() const;
  /// Componentwise clamp into the bounding box of the grid.
  void clamp(std::span<double> action) const;
  /// Into the action set: the box for uniform grids, the nearest point
  /// (first in order on ties) for explicit point lists.
  void project(std::span<double> action) const;
  /// Euclidean metric on the embedding.
  static double distance(std::span<const double> a, std::span<const double> b);

  bool operator==(const ActionGrid&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> points_;
  std::vector<double> lower_;
  std::vector<double> upper_;
  std::vector<std::size_t> counts_;
};

struct Scenario {
  std::string name;
  std::size_t dim = 1;
  std::vector<double> initial_point{0.0};
  double horizon = 1.0;
  std::size_t steps = 50;
  DiffusionSpec diffusion;
  std::vector<StatisticSpec> statistics;
  DriftSpec drift;
  RunningCostSpec running_cost;
  TerminalCostSpec terminal_cost;
  ActionGrid actions_u;
  std::optional<ActionGrid> actions_v;

  bool is_game() const { return actions_v.has_value(); }
  std::size_t u_dim() const { return actions_u.dim(); }
  std::size_t v_dim() const { return actions_v ? actions_v->dim() : 0; }
  std::size_t statistic_count() const { return statistics.size(); }
  std::optional<std::size_t> find_statistic(const std::string& name) const;

  /// psi_j(x) for every registered statistic.
  void evaluate_statistics(std::span<const double> x, std::span<double> out) const;

  void drift_at(std::span<const double> x, std::span<const double> m,
                std::span<const double> u, std::span<const double> v,
                std::span<double> out) const;
  double running_cost_at(std::span<const double> x, std::span<const double> m,
                         std::span<const double> u, std::span<const double> v) const;
  double terminal_cost_at(std::span<const double> x, std::span<const double> m) const;

  bool drift_depends_on_measure() const;
  bool costs_depend_on_measure() const;
  bool terminal_depends_on_measure() const;

  bool operator==(const Scenario&) const = default;
};

/// Parses a JSON scenario document.
Scenario parse_scenario(const std::string& text);
/// Inverse of parse_scenario: parse_scenario(serialize_scenario(s)) == s.
std::string serialize_scenario(const Scenario& scenario);

enum class AssumptionStatus { certified, not_certified, violated };
const char* to_string(AssumptionStatus status);

struct AssumptionCheck {
  std::string id;
  AssumptionStatus status = AssumptionStatus::not_certified;
  std::string reason;
};

struct ValidationReport {
  std::vector<AssumptionCheck> checks;
  std::vector<std::string> unbounded_statistics;
  double alpha = 0.0;

  const AssumptionCheck& get(const std::string& id) const;
  bool has_violation() const;
  /// Lines for statuses other than certified.
  std::vector<std::string> caveats() const;
};

ValidationReport validate_scenario(const Scenario& scenario);

std::vector<Scenario> builtin_scenarios();
std::vector<std::string> builtin_names();
/// Throws ScenarioError listing the available names when unknown.
Scenario builtin_scenario(const std::string& name);

}  // namespace mfc
