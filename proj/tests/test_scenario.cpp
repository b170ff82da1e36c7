#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mfc/scenario.hpp"

using namespace mfc;

namespace {

const char* kMinimal = R"({
  "dimension": 1,
  "diffusion": {"kind": "constant", "matrix": [[1.0]]},
  "drift": {"control_u": [[1.0]]},
  "running_cost": {"u_quadratic": 0.5},
  "terminal_cost": {"kind": "linear", "coefficients": [1.0]},
  "actions_u": {"lower": [-1.0], "upper": [1.0], "points": 21}
})";

std::string error_of(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const ScenarioError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Parse, MinimalLinearQuadratic) {
  const Scenario s = parse_scenario(kMinimal);
  EXPECT_EQ(s.dim, 1u);
  EXPECT_EQ(s.actions_u.size(), 21u);
  EXPECT_FALSE(s.is_game());
  EXPECT_FALSE(s.drift_depends_on_measure());

  const std::vector<double> x{0.7}, u{-1.0};
  std::vector<double> f(1);
  s.drift_at(x, {}, u, {}, f);
  EXPECT_DOUBLE_EQ(f[0], -1.0);
  EXPECT_DOUBLE_EQ(s.running_cost_at(x, {}, u, {}), 0.5);
  EXPECT_DOUBLE_EQ(s.terminal_cost_at(x, {}), 0.7);

  // Same model as the built-in, up to the name.
  Scenario lq = builtin_scenario("linear-quadratic");
  lq.name = s.name;
  EXPECT_EQ(s, lq);
}

TEST(Parse, UnregisteredStatisticNamesField) {
  const std::string doc = R"({
    "dimension": 1,
    "drift": {"mean_field": [{"statistic": "psi9", "weights": [1.0]}]},
    "terminal_cost": {"kind": "linear", "coefficients": [1.0]},
    "actions_u": {"lower": [-1.0], "upper": [1.0], "points": 3}
  })";
  const std::string msg = error_of(doc);
  EXPECT_NE(msg.find("drift.mean_field[0].statistic"), std::string::npos) << msg;
  EXPECT_NE(msg.find("psi9"), std::string::npos) << msg;
}

TEST(Parse, MissingRequiredField) {
  const std::string msg = error_of(R"({"dimension": 1, "terminal_cost": {"kind": "linear", "coefficients": [1]}})");
  EXPECT_NE(msg.find("actions_u"), std::string::npos) << msg;
}

TEST(Parse, UnknownFieldAndKind) {
  std::string doc = kMinimal;
  doc.insert(doc.rfind('}'), R"(, "extra": 1)");
  EXPECT_NE(error_of(doc).find("extra"), std::string::npos);

  const std::string bad_kind = R"({
    "dimension": 1, "diffusion": {"kind": "cubic"},
    "terminal_cost": {"kind": "linear", "coefficients": [1.0]},
    "actions_u": {"lower": [-1.0], "upper": [1.0], "points": 3}
  })";
  EXPECT_NE(error_of(bad_kind).find("diffusion.kind"), std::string::npos);
}

TEST(Parse, DimensionMismatch) {
  const std::string doc = R"({
    "dimension": 2,
    "terminal_cost": {"kind": "linear", "coefficients": [1.0]},
    "actions_u": {"lower": [-1.0], "upper": [1.0], "points": 3}
  })";
  EXPECT_NE(error_of(doc).find("terminal_cost.coefficients"), std::string::npos) << error_of(doc);
}

TEST(Parse, MalformedJson) {
  EXPECT_THROW(parse_scenario("{ not json"), ScenarioError);
}

TEST(Parse, ExponentNotation) {
  std::string doc = kMinimal;
  doc.replace(doc.find("0.5"), 3, "5e-1");
  EXPECT_DOUBLE_EQ(parse_scenario(doc).running_cost.u_quadratic, 0.5);
}

TEST(Parse, SecondPlayerTermsRequireSecondGrid) {
  const std::string doc = R"({
    "dimension": 1,
    "drift": {"control_v": [[1.0]]},
    "terminal_cost": {"kind": "linear", "coefficients": [1.0]},
    "actions_u": {"lower": [-1.0], "upper": [1.0], "points": 3}
  })";
  EXPECT_NE(error_of(doc).find("drift.control_v"), std::string::npos);
}

TEST(Serialize, RoundTripEveryBuiltin) {
  for (const Scenario& s : builtin_scenarios()) {
    const std::string text = serialize_scenario(s);
    const Scenario back = parse_scenario(text);
    EXPECT_EQ(back, s) << s.name;
    EXPECT_EQ(serialize_scenario(back), text) << s.name;
  }
}

TEST(Builtins, RequiredNamesPresent) {
  const auto names = builtin_names();
  for (const char* want : {"zero-drift", "linear-quadratic", "mean-field-mean-reversion", "variance",
                           "separated-game", "bilinear-game"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), want), names.end()) << want;
  }
}

TEST(Builtins, VarianceUsesIdentityStatistic) {
  const Scenario s = builtin_scenario("variance");
  EXPECT_EQ(s.terminal_cost.kind, TerminalCostSpec::Kind::variance);
  ASSERT_EQ(s.statistics.size(), 1u);
  EXPECT_EQ(s.statistics[0].kind, StatisticSpec::Kind::identity);
}

TEST(Builtins, UnknownNameListsAvailable) {
  try {
    builtin_scenario("nope");
    FAIL() << "expected ScenarioError";
  } catch (const ScenarioError& e) {
    const std::string msg = e.what();
    for (const auto& n : builtin_names()) EXPECT_NE(msg.find(n), std::string::npos) << n;
  }
}

TEST(Builtins, NoneViolatesAssumptions) {
  for (const Scenario& s : builtin_scenarios()) {
    EXPECT_FALSE(validate_scenario(s).has_violation()) << s.name;
  }
}

TEST(Validate, LinearQuadraticTerminalNotCertified) {
  const auto r = validate_scenario(builtin_scenario("linear-quadratic"));
  EXPECT_EQ(r.get("B4").status, AssumptionStatus::not_certified);
  EXPECT_FALSE(r.get("B4").reason.empty());
  EXPECT_EQ(r.get("A2(b)").status, AssumptionStatus::certified);
}

TEST(Validate, BoundedVarianceScenarioCertified) {
  Scenario s = builtin_scenario("variance");
  s.statistics[0].kind = StatisticSpec::Kind::tanh;
  const auto r = validate_scenario(s);
  for (const char* id : {"B1", "B2", "B3", "B4"}) {
    EXPECT_EQ(r.get(id).status, AssumptionStatus::certified) << id << ": " << r.get(id).reason;
  }
}

TEST(Validate, VanishingSigmaIsViolation) {
  Scenario s = builtin_scenario("linear-quadratic");
  s.diffusion.base = Eigen::MatrixXd::Zero(1, 1);
  const auto r = validate_scenario(s);
  EXPECT_EQ(r.get("A2(b)").status, AssumptionStatus::violated);
  EXPECT_TRUE(r.has_violation());

  Scenario t = builtin_scenario("linear-quadratic");
  t.diffusion.kind = DiffusionSpec::Kind::affine_state;
  t.diffusion.scale_offset = 0.0;
  t.diffusion.scale_slope = 1.0;
  EXPECT_EQ(validate_scenario(t).get("A2(b)").status, AssumptionStatus::violated);
}

TEST(Validate, UnboundedStatisticInDriftNotCertified) {
  const auto r = validate_scenario(builtin_scenario("mean-field-mean-reversion"));
  EXPECT_EQ(r.get("A4").status, AssumptionStatus::not_certified);
  EXPECT_FALSE(r.unbounded_statistics.empty());
}

TEST(Validate, Deterministic) {
  const Scenario s = builtin_scenario("mean-field-mean-reversion");
  const auto a = validate_scenario(s), b = validate_scenario(s);
  ASSERT_EQ(a.checks.size(), b.checks.size());
  for (std::size_t i = 0; i < a.checks.size(); ++i) {
    EXPECT_EQ(a.checks[i].id, b.checks[i].id);
    EXPECT_EQ(a.checks[i].status, b.checks[i].status);
    EXPECT_EQ(a.checks[i].reason, b.checks[i].reason);
  }
}

TEST(Validate, GameUsesCFamily) {
  const auto r = validate_scenario(builtin_scenario("separated-game"));
  EXPECT_EQ(r.get("C1").status, AssumptionStatus::certified);
}

TEST(Statistic, KindsAndMetadata) {
  const std::vector<double> x{0.5};
  StatisticSpec id{.name = "a", .kind = StatisticSpec::Kind::identity};
  EXPECT_DOUBLE_EQ(id(x), 0.5);
  EXPECT_FALSE(id.bounded());
  EXPECT_FALSE(id.sup_norm().has_value());

  StatisticSpec th{.name = "b", .kind = StatisticSpec::Kind::tanh, .scale = 2.0};
  EXPECT_DOUBLE_EQ(th(x), std::tanh(0.25));
  EXPECT_TRUE(th.bounded());
  EXPECT_DOUBLE_EQ(*th.sup_norm(), 1.0);
  EXPECT_DOUBLE_EQ(*th.lipschitz(), 0.5);

  StatisticSpec sq{.name = "c", .kind = StatisticSpec::Kind::square};
  EXPECT_DOUBLE_EQ(sq(x), 0.25);
  EXPECT_FALSE(sq.lipschitz().has_value());

  StatisticSpec ind{.name = "d", .kind = StatisticSpec::Kind::indicator_bin, .lower = 0.0, .upper = 0.5};
  EXPECT_DOUBLE_EQ(ind(x), 0.0);  // half-open
  const std::vector<double> y{0.0};
  EXPECT_DOUBLE_EQ(ind(y), 1.0);
  EXPECT_TRUE(ind.bounded());
}

TEST(ActionGrid, UniformPoints) {
  const ActionGrid g = ActionGrid::uniform({-1.0}, {1.0}, {21});
  ASSERT_EQ(g.size(), 21u);
  EXPECT_DOUBLE_EQ(g.point(0)[0], -1.0);
  EXPECT_DOUBLE_EQ(g.point(20)[0], 1.0);
  EXPECT_NEAR(g.point(10)[0], 0.0, 1e-15);
  EXPECT_NEAR(g.resolution(), 0.1, 1e-12);
}

TEST(ActionGrid, LexicographicOrder) {
  const ActionGrid g = ActionGrid::uniform({0.0, 0.0}, {1.0, 1.0}, {2, 3});
  ASSERT_EQ(g.size(), 6u);
  for (std::size_t j = 1; j < g.size(); ++j) {
    const auto a = g.point(j - 1), b = g.point(j);
    EXPECT_TRUE(std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end()));
  }
}

TEST(ActionGrid, ClampAndProject) {
  const ActionGrid box = ActionGrid::uniform({-1.0}, {1.0}, {5});
  std::vector<double> a{3.0};
  box.clamp(a);
  EXPECT_EQ(a[0], 1.0);
  std::vector<double> b{0.3};
  box.project(b);
  EXPECT_EQ(b[0], 0.3);  // uniform grids keep the continuum box

  const ActionGrid pts = ActionGrid::from_points(1, {-1.0, 1.0});
  std::vector<double> c{0.2};
  pts.project(c);
  EXPECT_EQ(c[0], 1.0);
  std::vector<double> tie{0.0};
  pts.project(tie);
  EXPECT_EQ(tie[0], -1.0);  // first in order on ties
}

TEST(ActionGrid, SinglePointAndDistance) {
  const ActionGrid g = ActionGrid::from_points(1, {0.5});
  EXPECT_EQ(g.resolution(), 0.0);
  const std::vector<double> a{0.0, 0.0}, b{3.0, 4.0};
  EXPECT_DOUBLE_EQ(ActionGrid::distance(a, b), 5.0);
  EXPECT_DOUBLE_EQ(ActionGrid::distance(a, a), 0.0);
}
