#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mfc/game.hpp"

using namespace mfc;

namespace {

constexpr std::size_t kM = 10000;

Scenario game(const std::string& body) {
  return parse_scenario(R"({"dimension": 1, "horizon": 1.0, "steps": 50,
      "actions_u": {"lower": [-1.0], "upper": [1.0], "points": 21},
      "actions_v": {"lower": [-1.0], "upper": [1.0], "points": 21}, )" + body + "}");
}

const ReferenceSample& separated() {
  static const ReferenceSample s(builtin_scenario("separated-game"), kM, 7);
  return s;
}

const SaddleReport& separated_report() {
  static const SaddleReport r = solve_game(separated(), BasisSpec{});
  return r;
}

MeasureFlow reference_flow(const ReferenceSample& s) {
  return MeasureFlow::reference(s.shared_paths(), s.scenario().statistics);
}

}  // namespace

TEST(GameHamiltonian, Formula) {
  const auto& s = separated();
  const std::vector<double> z0{0.0}, z{0.8}, u{0.3}, v{-0.6};
  EXPECT_DOUBLE_EQ(game_hamiltonian(s, 1, 2, {}, z0, u, v), 0.5 * 0.09 - 0.5 * 0.36);
  EXPECT_DOUBLE_EQ(game_hamiltonian(s, 1, 2, {}, z, u, v), 0.8 * (0.3 - 0.6) + 0.5 * 0.09 - 0.5 * 0.36);
  const std::vector<double> zero{0.0};
  EXPECT_DOUBLE_EQ(game_hamiltonian(s, 1, 2, {}, z, zero, zero), 0.0);
}

TEST(Envelopes, SeparatedAreEqual) {
  const auto& s = separated();
  const auto& gu = s.scenario().actions_u;
  const auto& gv = *s.scenario().actions_v;
  for (double zv : {-2.0, -0.35, 0.0, 0.6, 1.0, 3.0}) {
    const std::vector<double> z{zv};
    const Envelopes e = envelopes(s, 4, 9, {}, z, gu, gv);
    EXPECT_EQ(e.lower, e.upper) << "z = " << zv;
    EXPECT_EQ(e.gap(), 0.0);
  }
}

TEST(Envelopes, BilinearMatchingPennies) {
  const ReferenceSample s(builtin_scenario("bilinear-game"), 10, 1);
  const std::vector<double> z{0.0};
  const Envelopes e = envelopes(s, 0, 0, {}, z, s.scenario().actions_u, *s.scenario().actions_v);
  EXPECT_EQ(e.lower, -1.0);
  EXPECT_EQ(e.upper, 1.0);
  EXPECT_LE(e.lower, e.upper);
}

TEST(Envelopes, SinglePointGrids) {
  const auto& s = separated();
  const ActionGrid gu = ActionGrid::from_points(1, {0.4}), gv = ActionGrid::from_points(1, {-0.2});
  const std::vector<double> z{0.7}, u{0.4}, v{-0.2};
  const Envelopes e = envelopes(s, 3, 3, {}, z, gu, gv);
  const double h = game_hamiltonian(s, 3, 3, {}, z, u, v);
  EXPECT_DOUBLE_EQ(e.lower, h);
  EXPECT_DOUBLE_EQ(e.upper, h);
}

TEST(Envelopes, OrderHoldsOnRandomPayoffs) {
  const ReferenceSample s(game(R"("drift": {"control_u": [[1.0]], "control_v": [[-0.5]]},
      "running_cost": {"u_quadratic": -0.3, "v_quadratic": 0.2, "uv_cross": 1.3},
      "terminal_cost": {"kind": "linear", "coefficients": [1.0]})"), 200, 3);
  for (std::size_t i = 0; i < 200; i += 7)
    for (double zv : {-1.5, 0.2, 2.0}) {
      const std::vector<double> z{zv};
      const Envelopes e = envelopes(s, 10, i, {}, z, s.scenario().actions_u, *s.scenario().actions_v);
      EXPECT_LE(e.lower, e.upper);
    }
}

TEST(IsaacsGap, SeparatedIsExactlyZero) {
  const auto& s = separated();
  const MeasureFlow flow = reference_flow(s);
  const BsdeSolution b = solve_envelope_bsde(s, flow, Envelope::lower, BasisSpec{});
  const IsaacsGap g = isaacs_gap(s, flow, b, 10);
  EXPECT_EQ(g.max_gap, 0.0);
  EXPECT_EQ(g.mean_gap, 0.0);
  EXPECT_EQ(g.profile_max.size(), s.grid().steps);
}

TEST(IsaacsGap, BilinearIsTwo) {
  const ReferenceSample s(builtin_scenario("bilinear-game"), 2000, 3);
  const MeasureFlow flow = reference_flow(s);
  const BsdeSolution b = solve_envelope_bsde(s, flow, Envelope::lower, BasisSpec{});
  EXPECT_DOUBLE_EQ(isaacs_gap(s, flow, b).max_gap, 2.0);
}

TEST(IsaacsGap, InvariantUnderActionFreeCostShift) {
  const std::string base = R"("running_cost": {"uv_cross": 1.0 XX},
      "statistics": [{"name": "t", "kind": "tanh"}],
      "terminal_cost": {"kind": "linear", "coefficients": [1.0]})";
  std::string plain = base, shifted = base;
  plain.replace(plain.find(" XX"), 3, "");
  shifted.replace(shifted.find(" XX"), 3, R"(, "constant": 0.7, "state_terms": [{"statistic": "t", "weight": 2.0}])");
  // Pure-strategy grids {-1, 1}: a grid containing 0 would have a saddle at (0, 0).
  auto pennies = [](const std::string& body) {
    return parse_scenario(R"({"dimension": 1, "horizon": 1.0, "steps": 50,
        "actions_u": {"values": [[-1.0], [1.0]]}, "actions_v": {"values": [[-1.0], [1.0]]}, )" + body + "}");
  };
  const ReferenceSample a(pennies(plain), 1000, 2), b(pennies(shifted), 1000, 2);
  const MeasureFlow fa = reference_flow(a), fb = reference_flow(b);
  const BsdeSolution za = solve_envelope_bsde(a, fa, Envelope::lower, BasisSpec{});
  const IsaacsGap ga = isaacs_gap(a, fa, za), gb = isaacs_gap(b, fb, za);
  EXPECT_NEAR(ga.max_gap, gb.max_gap, 1e-12);
  EXPECT_NEAR(ga.mean_gap, gb.mean_gap, 1e-12);
  EXPECT_GT(ga.max_gap, 0.0);
}

TEST(SolveGame, SeparatedSaddle) {
  const auto& s = separated();
  const SaddleReport& r = separated_report();
  ASSERT_TRUE(r.isaacs_ok) << r.diagnostic;
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.value.value, s.scenario().initial_point[0], 3.0 * r.value.se + r.grid_term);
  EXPECT_NEAR(r.payoff.value, s.scenario().initial_point[0], 3.0 * r.payoff.se + r.grid_term);
  EXPECT_NEAR(r.lower_value.value, r.upper_value.value, 2.0 * combined_se(r.lower_value.se, r.upper_value.se));
  // Z = 1 along the solution: u* = -1, v* = +1
  for (std::size_t k = 0; k < s.grid().size(); k += 10)
    for (std::size_t i = 0; i < kM; i += 1000) {
      EXPECT_EQ(r.u_path.at(k, i)[0], -1.0);
      EXPECT_EQ(r.v_path.at(k, i)[0], 1.0);
    }
  EXPECT_TRUE(r.terminal_ok) << r.terminal_note;
}

TEST(SolveGame, BilinearReportsIsaacsFailure) {
  const ReferenceSample s(builtin_scenario("bilinear-game"), 2000, 3);
  const SaddleReport r = solve_game(s, BasisSpec{});
  EXPECT_FALSE(r.isaacs_ok);
  EXPECT_DOUBLE_EQ(r.gap.max_gap, 2.0);
  EXPECT_FALSE(r.diagnostic.empty());
  EXPECT_LT(r.lower_value.value, r.upper_value.value);
  EXPECT_THROW(verify_saddle(s, r, {}, {}), std::invalid_argument);
}

TEST(SolveGame, NegatedSquaredDistanceFailsIsaacs) {
  // h = -(u - v)^2: the minimizer runs from the maximizer, so
  // max_v min_u H = -1 (v = 0) while min_u max_v H = 0 (v = u).
  const ReferenceSample s(game(R"("running_cost": {"u_quadratic": -1.0, "v_quadratic": -1.0, "uv_cross": 2.0},
      "terminal_cost": {"kind": "linear", "coefficients": [1.0]})"), 1000, 4);
  const std::vector<double> z{0.0};
  const Envelopes e = envelopes(s, 0, 0, {}, z, s.scenario().actions_u, *s.scenario().actions_v);
  EXPECT_DOUBLE_EQ(e.lower, -1.0);
  EXPECT_DOUBLE_EQ(e.upper, 0.0);
  EXPECT_FALSE(solve_game(s, BasisSpec{}).isaacs_ok);
}

TEST(SolveGame, SquaredDistanceFailsIsaacsToo) {
  // h = (u - v)^2: max_v min_u H = 0 on the diagonal, min_u max_v H = 1.
  const ReferenceSample s(game(R"("running_cost": {"u_quadratic": 1.0, "v_quadratic": 1.0, "uv_cross": -2.0},
      "terminal_cost": {"kind": "linear", "coefficients": [1.0]})"), 1000, 4);
  const std::vector<double> z{0.0};
  const Envelopes e = envelopes(s, 0, 0, {}, z, s.scenario().actions_u, *s.scenario().actions_v);
  EXPECT_DOUBLE_EQ(e.lower, 0.0);
  EXPECT_DOUBLE_EQ(e.upper, 1.0);
}

TEST(SolveGame, DegenerateSecondPlayerReducesToControl) {
  const ReferenceSample g(parse_scenario(R"({"dimension": 1, "horizon": 1.0, "steps": 50,
      "drift": {"control_u": [[1.0]], "control_v": [[1.0]]}, "running_cost": {"u_quadratic": 0.5},
      "terminal_cost": {"kind": "linear", "coefficients": [1.0]},
      "actions_u": {"lower": [-1.0], "upper": [1.0], "points": 21},
      "actions_v": {"values": [[0.0]]}})"), kM, 13);
  const ReferenceSample c(builtin_scenario("linear-quadratic"), kM, 13);
  const SaddleReport r = solve_game(g, BasisSpec{});
  const OptimizationReport o = policy_iteration(c, c.scenario().actions_u, BasisSpec{});
  ASSERT_TRUE(r.isaacs_ok);
  EXPECT_NEAR(r.value.value, o.value.value, 2.0 * combined_se(r.value.se, o.value.se) + 1e-12);
}

TEST(SolveGame, SwappingRolesNegatesValue) {
  const std::string original = R"("initial_point": [0.4], "drift": {"control_u": [[1.0]], "control_v": [[1.0]]},
      "running_cost": {"u_quadratic": 0.5, "v_quadratic": -0.5},
      "terminal_cost": {"kind": "linear", "coefficients": [1.0]})";
  // h'(u, v) = -h(v, u), g' = -g
  const std::string swapped = R"("initial_point": [0.4], "drift": {"control_u": [[1.0]], "control_v": [[1.0]]},
      "running_cost": {"u_quadratic": 0.5, "v_quadratic": -0.5},
      "terminal_cost": {"kind": "linear", "coefficients": [-1.0]})";
  const ReferenceSample a(game(original), 4000, 5), b(game(swapped), 4000, 5);
  const SaddleReport ra = solve_game(a, BasisSpec{}), rb = solve_game(b, BasisSpec{});
  ASSERT_TRUE(ra.isaacs_ok);
  ASSERT_TRUE(rb.isaacs_ok);
  EXPECT_NEAR(ra.value.value, -rb.value.value, 2.0 * combined_se(ra.value.se, rb.value.se) + ra.grid_term + rb.grid_term);
}

TEST(VerifySaddle, SelfTest) {
  const auto& s = separated();
  const SaddleReport& r = separated_report();
  const SaddleVerification v = verify_saddle(s, r, {r.u_star}, {r.v_star});
  ASSERT_EQ(v.u_slacks.size(), 1u);
  ASSERT_EQ(v.v_slacks.size(), 1u);
  EXPECT_NEAR(v.u_slacks[0].slack, 0.0, 2.0 * v.u_slacks[0].se + 1e-12);
  EXPECT_NEAR(v.v_slacks[0].slack, 0.0, 2.0 * v.v_slacks[0].se + 1e-12);
  EXPECT_TRUE(v.all_ok);
}

TEST(VerifySaddle, SeparatedConstantGridsHaveCorrectSigns) {
  const auto& s = separated();
  const SaddleReport& r = separated_report();
  std::vector<Control> tu, tv;
  const auto& gu = s.scenario().actions_u;
  const auto& gv = *s.scenario().actions_v;
  for (std::size_t j = 0; j < gu.size(); j += 2) tu.push_back(Control::constant(gu, {gu.point(j)[0]}));
  for (std::size_t j = 0; j < gv.size(); j += 2) tv.push_back(Control::constant(gv, {gv.point(j)[0]}));
  const SaddleVerification v = verify_saddle(s, r, tu, tv);
  EXPECT_TRUE(v.all_ok);
  for (const auto& e : v.v_slacks) EXPECT_LE(e.slack, 3.0 * e.se) << e.name;
  for (const auto& e : v.u_slacks) EXPECT_GE(e.slack, -3.0 * e.se) << e.name;
}

TEST(VerifySaddle, CostFreeGameHasZeroSlacks) {
  const ReferenceSample s(game(R"("initial_point": [0.25], "terminal_cost": {"kind": "linear", "coefficients": [1.0]})"),
                          2000, 8);
  const SaddleReport r = solve_game(s, BasisSpec{});
  ASSERT_TRUE(r.isaacs_ok);
  const auto tu = standard_test_controls(s.scenario().actions_u, s.grid().steps);
  const auto tv = standard_test_controls(*s.scenario().actions_v, s.grid().steps, 1);
  const SaddleVerification v = verify_saddle(s, r, tu, tv);
  // Every pair has payoff mean(g) on the shared particles.
  const Estimate g = sample_mean(path_statistic(s.paths(), s.grid().steps, PathStatisticKind::current_value));
  EXPECT_NEAR(v.center.value, g.value, 1e-12);
  EXPECT_NEAR(g.value, 0.25, 3.0 * g.se);
  for (const auto& e : v.u_slacks) EXPECT_NEAR(e.slack, 0.0, 1e-12);
  for (const auto& e : v.v_slacks) EXPECT_NEAR(e.slack, 0.0, 1e-12);
  EXPECT_TRUE(v.all_ok);
}
