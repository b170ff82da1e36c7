#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mfc/bsde.hpp"
#include "mfc/control.hpp"

using namespace mfc;

namespace {

constexpr std::size_t kM = 10000;

Scenario from_terminal(const std::string& terminal, const std::string& extra = "") {
  return parse_scenario(R"({
    "dimension": 1, "initial_point": [0.3], "horizon": 1.0, "steps": 20,
    "statistics": [{"name": "sq", "kind": "square"}],
    "terminal_cost": )" + terminal + extra + R"(,
    "actions_u": {"lower": [-1.0], "upper": [1.0], "points": 21}
  })");
}

const ReferenceSample& martingale_sample() {
  static const ReferenceSample s(from_terminal(R"({"kind": "linear", "coefficients": [1.0]})"), kM, 31);
  return s;
}

ActionPath constant_actions(const ReferenceSample& s, double u) {
  return sample_control(s, Control::constant(s.scenario().actions_u, {u}));
}

MeasureFlow reference_flow(const ReferenceSample& s) {
  return MeasureFlow::reference(s.shared_paths(), s.scenario().statistics);
}

// Exactness checks run unpenalized; the default ridge shrinks the
// non-constant coefficients by a relative 1e-8.
BasisSpec plain() {
  BasisSpec b;
  b.ridge = 0.0;
  return b;
}

const DriverEvaluator kZeroDriver = [](std::size_t, std::size_t, std::span<const double>, std::span<double> g) {
  for (double& v : g) v = 0.0;
  return 0.0;
};

}  // namespace

TEST(Regress, ConstantTarget) {
  Eigen::MatrixXd x(5, 2);
  x << 1, 0.1, 1, -0.4, 1, 0.9, 1, 0.3, 1, -1.2;
  const std::vector<double> y(5, 2.5);
  const RegressionResult r = regress_conditional(y, x, 0.0);
  for (double f : r.fitted) EXPECT_NEAR(f, 2.5, 1e-12);
  EXPECT_NEAR(r.residual_norm, 0.0, 1e-12);
}

TEST(Regress, InSpanTarget) {
  Eigen::MatrixXd x(6, 2);
  std::vector<double> y;
  for (int i = 0; i < 6; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = 0.5 * i - 1.0;
    y.push_back(3.0 - 2.0 * x(i, 1));
  }
  const RegressionResult r = regress_conditional(y, x, 0.0);
  EXPECT_NEAR(r.residual_norm, 0.0, 1e-12);
  EXPECT_NEAR(r.coefficients(0), 3.0, 1e-12);
  EXPECT_NEAR(r.coefficients(1), -2.0, 1e-12);
}

TEST(Regress, RankDeficientNeedsRidge) {
  Eigen::MatrixXd x(4, 2);
  x << 1, 1, 1, 1, 1, 1, 1, 1;
  const std::vector<double> y{1, 2, 3, 4};
  try {
    regress_conditional(y, x, 0.0);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("ridge"), std::string::npos);
  }
  EXPECT_NO_THROW(regress_conditional(y, x, 1e-8));
  EXPECT_THROW(regress_conditional(y, x, -1.0), std::invalid_argument);
  EXPECT_THROW(regress_conditional(std::vector<double>{1.0}, x, 0.0), std::invalid_argument);
}

TEST(Regress, BrownianMartingale) {
  const auto& s = martingale_sample();
  const std::size_t k = 10, n = s.grid().steps;
  const auto xk = path_statistic(s.paths(), k, PathStatisticKind::current_value);
  const auto xn = path_statistic(s.paths(), n, PathStatisticKind::current_value);
  Eigen::MatrixXd f(kM, 3);
  for (std::size_t i = 0; i < kM; ++i) {
    f(i, 0) = 1.0;
    f(i, 1) = xk[i];
    f(i, 2) = xk[i] * xk[i];
  }
  const RegressionResult r = regress_conditional(xn, f, 0.0);
  // E[x_T | x_t] = x_t; the fitted error has sd about sqrt(p (T - t) / M)
  const double tol = 3.0 * std::sqrt(3.0 * (1.0 - s.grid().times[k]) / kM);
  double worst = 0.0;
  for (std::size_t i = 0; i < kM; ++i) worst = std::max(worst, std::abs(r.fitted[i] - xk[i]) / (1.0 + xk[i] * xk[i]));
  EXPECT_LT(worst, 3.0 * tol);
  EXPECT_NEAR(r.coefficients(1), 1.0, tol);
}

TEST(LinearBsde, ConstantTerminalZeroDriver) {
  const ReferenceSample s(from_terminal(R"({"kind": "linear", "coefficients": [0.0], "constant": 1.75})"), 2000, 4);
  const BsdeSolution b = solve_linear_bsde(s, constant_actions(s, 0.0), s.empty_actions(), reference_flow(s),
                                           plain());
  for (double y : b.y) EXPECT_NEAR(y, 1.75, 1e-9);
  for (double z : b.z) EXPECT_NEAR(z, 0.0, 1e-9);
  EXPECT_NEAR(b.y0.value, 1.75, 1e-9);
}

TEST(LinearBsde, BrownianRepresentation) {
  const auto& s = martingale_sample();
  const BsdeSolution b = solve_linear_bsde(s, constant_actions(s, 0.0), s.empty_actions(), reference_flow(s),
                                           BasisSpec{});
  EXPECT_NEAR(b.y0.value, 0.3, 3.0 * b.y0.se + 1e-12);
  for (std::size_t k = 0; k < s.grid().steps; k += 4) {
    for (std::size_t i = 0; i < kM; i += 250) {
      EXPECT_NEAR(b.Y(k, i), s.state(i, k)[0], 0.05) << k << " " << i;
      EXPECT_NEAR(b.Z(k, i)[0], 1.0, 0.05) << k << " " << i;
    }
  }
}

TEST(LinearBsde, TerminalExact) {
  const auto& s = martingale_sample();
  const MeasureFlow flow = reference_flow(s);
  const BsdeSolution b = solve_linear_bsde(s, constant_actions(s, 0.4), s.empty_actions(), flow, BasisSpec{});
  const auto g = terminal_values(s, flow);
  const std::size_t n = s.grid().steps;
  for (std::size_t i = 0; i < kM; ++i) EXPECT_EQ(b.Y(n, i), g[i]);
}

TEST(LinearBsde, LinearQuadraticClosedForm) {
  const ReferenceSample s(builtin_scenario("linear-quadratic"), kM, 12);
  const double T = s.grid().horizon, xi = s.scenario().initial_point[0];
  for (double u : {-1.0, 0.5}) {
    const ActionPath a = constant_actions(s, u);
    const FixpointResult fp = fixpoint_measure_flow(s, a, s.empty_actions());
    const BsdeSolution b = solve_linear_bsde(s, a, s.empty_actions(), fp.flow, BasisSpec{});
    // Constant controls are represented exactly, so the sampling error is
    // tiny and the deterministic ridge shrinkage of Z shows; bound it.
    const double ridge_bias = 100.0 * BasisSpec{}.ridge;
    EXPECT_NEAR(b.y0.value, xi + u * T + 0.5 * u * u * T, 3.0 * b.y0.se + ridge_bias) << "u = " << u;
    EXPECT_EQ(b.y0_terms.size(), kM);
  }
}

TEST(LinearBsde, LinearInCosts) {
  const std::string lq = R"({
    "dimension": 1, "horizon": 1.0, "steps": 20,
    "drift": {"control_u": [[1.0]]}, "running_cost": {"u_quadratic": 0.5},
    "terminal_cost": {"kind": "linear", "coefficients": [1.0]},
    "actions_u": {"lower": [-1.0], "upper": [1.0], "points": 21}
  })";
  std::string doubled = lq;
  doubled.replace(doubled.find("0.5"), 3, "1.0");
  doubled.replace(doubled.find("[1.0]}"), 6, "[2.0]}");
  const ReferenceSample a(parse_scenario(lq), 4000, 9), b(parse_scenario(doubled), 4000, 9);
  const Control c = Control::parametric(a.scenario().actions_u, {0.2}, {-0.5}, {0.1});
  const auto ua = sample_control(a, c), ub = sample_control(b, c);
  const auto fa = fixpoint_measure_flow(a, ua, a.empty_actions()).flow;
  const auto fb = fixpoint_measure_flow(b, ub, b.empty_actions()).flow;
  const BsdeSolution ya = solve_linear_bsde(a, ua, a.empty_actions(), fa, BasisSpec{});
  const BsdeSolution yb = solve_linear_bsde(b, ub, b.empty_actions(), fb, BasisSpec{});
  EXPECT_NEAR(yb.y0.value, 2.0 * ya.y0.value, 2.0 * 2.0 * ya.y0.se);
}

TEST(DriverBsde, ZeroDriverConstantTerminal) {
  const auto& s = martingale_sample();
  const std::vector<double> g(kM, -0.25);
  const BsdeSolution b = solve_driver_bsde(s, kZeroDriver, g, plain());
  for (double y : b.y) EXPECT_NEAR(y, -0.25, 1e-9);
  EXPECT_THROW(solve_driver_bsde(s, kZeroDriver, std::vector<double>(3, 0.0), BasisSpec{}), std::invalid_argument);
}

TEST(DriverBsde, TerminalBitExact) {
  const auto& s = martingale_sample();
  std::vector<double> g(kM);
  for (std::size_t i = 0; i < kM; ++i) g[i] = std::sin(s.state(i, s.grid().steps)[0]) / 3.0;
  const BsdeSolution b = solve_driver_bsde(s, kZeroDriver, g, BasisSpec{});
  for (std::size_t i = 0; i < kM; ++i) EXPECT_EQ(b.Y(s.grid().steps, i), g[i]);
}

TEST(DriverBsde, MinimizedHamiltonianLinearQuadratic) {
  const ReferenceSample s(builtin_scenario("linear-quadratic"), kM, 21);
  const MeasureFlow flow = reference_flow(s);
  const BsdeSolution b = solve_min_bsde(s, s.scenario().actions_u, flow, BasisSpec{});
  const double grid = grid_resolution_term(s, s.scenario().actions_u, b, flow);
  const double want = s.scenario().initial_point[0] - 0.5 * s.grid().horizon;
  EXPECT_NEAR(b.y0.value, want, 3.0 * b.y0.se + grid) << "se " << b.y0.se << " grid " << grid;
  // Z is the martingale part of x_T: 1 everywhere.
  std::vector<double> z(1);
  const std::vector<double> x{0.7};
  b.z_at(10, x, 0.7, z);
  EXPECT_NEAR(z[0], 1.0, 0.05);
}

TEST(DriverBsde, LinearDriverMatchesLinearSolver) {
  const ReferenceSample s(builtin_scenario("linear-quadratic"), kM, 22);
  const double u = 0.3;
  const ActionPath a = constant_actions(s, u);
  const MeasureFlow flow = fixpoint_measure_flow(s, a, s.empty_actions()).flow;
  const BsdeSolution lin = solve_linear_bsde(s, a, s.empty_actions(), flow, BasisSpec{});
  const DriverEvaluator driver = [&](std::size_t k, std::size_t i, std::span<const double> z, std::span<double> g) {
    if (!g.empty()) g[0] = u;
    return s.hamiltonian(k, i, {}, z, a.at(k, i), {});
  };
  const BsdeSolution gen = solve_driver_bsde(s, driver, terminal_values(s, flow), BasisSpec{});
  EXPECT_NEAR(gen.y0.value, lin.y0.value, 2.0 * combined_se(gen.y0.se, lin.y0.se));
}

TEST(DriverBsde, ResidualDecreasesWithDegree) {
  // g = x_T^2 has Y_t = x_t^2 + T - t, outside the degree-1 span.
  const ReferenceSample s(
      from_terminal(R"({"kind": "bounded", "state_terms": [{"statistic": "sq", "weight": 1.0}]})"), 4000, 2);
  const auto g = terminal_values(s, reference_flow(s));
  std::vector<double> mean_res;
  for (std::size_t p : {1, 2, 3}) {
    BasisSpec basis;
    basis.degree = p;
    const BsdeSolution b = solve_driver_bsde(s, kZeroDriver, g, basis);
    double acc = 0.0;
    for (double r : b.residual_norms) acc += r;
    mean_res.push_back(acc / static_cast<double>(b.residual_norms.size()));
  }
  EXPECT_GT(mean_res[0], mean_res[1]);
  EXPECT_LE(mean_res[2], mean_res[1] + 1e-9);
}

TEST(DriverBsde, ControlFeaturesDisableZAt) {
  const ReferenceSample s(builtin_scenario("linear-quadratic"), 2000, 5);
  const Control c = Control::parametric(s.scenario().actions_u, {0.0}, {1.0}, {0.0});
  const ActionPath a = sample_control(s, c);
  const MeasureFlow flow = fixpoint_measure_flow(s, a, s.empty_actions()).flow;
  const BsdeSolution b = solve_linear_bsde(s, a, s.empty_actions(), flow, BasisSpec{});
  ASSERT_TRUE(b.control_features);
  std::vector<double> z(1);
  const std::vector<double> x{0.0};
  EXPECT_THROW(b.z_at(3, x, 0.0, z), std::logic_error);
}

TEST(FeatureMap, DropsConstantVariablesAtTimeZero) {
  const auto& s = martingale_sample();
  BasisSpec basis;
  basis.degree = 3;
  EXPECT_EQ(FeatureMap::fit(s.paths(), 0, basis).size(), 1u);
  EXPECT_EQ(FeatureMap::fit(s.paths(), 5, basis).size(), 4u);
  basis.use_running_sup = true;
  EXPECT_GT(FeatureMap::fit(s.paths(), 5, basis).size(), 4u);
  EXPECT_FALSE(basis.describe().empty());
}
