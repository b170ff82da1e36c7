#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mfc/core.hpp"

using namespace mfc;

TEST(TimeGrid, UniformPartition) {
  const TimeGrid g = make_time_grid(1.0, 4);
  ASSERT_EQ(g.size(), 5u);
  EXPECT_DOUBLE_EQ(g.dt, 0.25);
  const std::vector<double> want{0.0, 0.25, 0.5, 0.75, 1.0};
  for (std::size_t k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(g.times[k], want[k]);
}

TEST(TimeGrid, LastPointIsHorizon) {
  const TimeGrid g = make_time_grid(0.7, 3);
  EXPECT_EQ(g.times.back(), 0.7);
  EXPECT_EQ(g.times.front(), 0.0);
}

TEST(TimeGrid, RejectsBadArguments) {
  EXPECT_THROW(make_time_grid(0.0, 10), std::invalid_argument);
  EXPECT_THROW(make_time_grid(-1.0, 10), std::invalid_argument);
  EXPECT_THROW(make_time_grid(1.0, 0), std::invalid_argument);
}

TEST(Brownian, SameSeedSameIncrements) {
  const TimeGrid g = make_time_grid(1.0, 10);
  const auto a = sample_brownian(g, 50, 2, 42);
  const auto b = sample_brownian(g, 50, 2, 42);
  EXPECT_EQ(a.raw(), b.raw());
  const auto c = sample_brownian(g, 50, 2, 43);
  EXPECT_NE(a.raw(), c.raw());
}

TEST(Brownian, ParticleStreamsIndependentOfEnsembleSize) {
  const TimeGrid g = make_time_grid(1.0, 8);
  const auto small = sample_brownian(g, 10, 1, 5);
  const auto large = sample_brownian(g, 30, 1, 5);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(small.increment(i, k)[0], large.increment(i, k)[0]);
}

TEST(Brownian, IncrementVarianceIsDt) {
  const std::size_t m = 20000;
  const TimeGrid g = make_time_grid(1.0, 10);
  const auto w = sample_brownian(g, m, 1, 7);
  double s = 0.0, s2 = 0.0;
  for (double x : w.raw()) { s += x; s2 += x * x; }
  const double n = static_cast<double>(w.raw().size());
  EXPECT_NEAR(s / n, 0.0, 4.0 * std::sqrt(g.dt / n));
  // var of x^2 is 2 dt^2
  EXPECT_NEAR(s2 / n, g.dt, 4.0 * std::sqrt(2.0 / n) * g.dt);
}

TEST(Brownian, RejectsWrongIncrementSize) {
  const TimeGrid g = make_time_grid(1.0, 4);
  EXPECT_THROW(BrownianEnsemble(g, 3, 1, 0, std::vector<double>(5, 0.0)), std::invalid_argument);
  EXPECT_THROW(sample_brownian(g, 0, 1, 0), std::invalid_argument);
}

TEST(Diffusion, IdentityRoundTrip) {
  const DiffusionEvaluator sigma(DiffusionSpec::identity(2));
  const std::vector<double> x{0.3, -0.1}, in{1.5, -2.0};
  std::vector<double> out(2), back(2);
  sigma.apply(x, 0.3, in, out);
  EXPECT_EQ(out, in);
  sigma.apply_inverse(x, 0.3, in, back);
  EXPECT_EQ(back, in);
}

TEST(Diffusion, AffineStateScale) {
  DiffusionSpec spec;
  spec.kind = DiffusionSpec::Kind::affine_state;
  spec.scale_offset = 1.0;
  spec.scale_slope = 0.5;
  const DiffusionEvaluator sigma(spec);
  const std::vector<double> x{-2.0}, in{1.0};
  std::vector<double> out(1);
  sigma.apply(x, 2.0, in, out);
  EXPECT_DOUBLE_EQ(out[0], 2.0);
  sigma.apply_inverse(x, 2.0, in, out);
  EXPECT_DOUBLE_EQ(out[0], 0.5);
}

TEST(Diffusion, SupModulatedUsesRunningSup) {
  DiffusionSpec spec;
  spec.kind = DiffusionSpec::Kind::sup_modulated;
  spec.scale_offset = 1.0;
  spec.scale_slope = 1.0;
  const std::vector<double> x{0.5};
  EXPECT_DOUBLE_EQ(spec.scale(x, 3.0), 4.0);
}

TEST(Diffusion, SingularInverseThrows) {
  DiffusionSpec spec;
  spec.base = Eigen::MatrixXd::Zero(1, 1);
  const DiffusionEvaluator sigma(spec);
  const std::vector<double> x{0.0}, in{1.0};
  std::vector<double> out(1);
  EXPECT_THROW(sigma.apply_inverse(x, 0.0, in, out), NumericalError);

  DiffusionSpec vanishing;
  vanishing.kind = DiffusionSpec::Kind::affine_state;
  vanishing.scale_offset = 0.0;
  vanishing.scale_slope = 1.0;
  const DiffusionEvaluator s2(vanishing);
  EXPECT_THROW(s2.apply_inverse(x, 0.0, in, out), NumericalError);
}

TEST(Reference, ZeroNoiseStaysAtInitialPoint) {
  const TimeGrid g = make_time_grid(1.0, 5);
  const BrownianEnsemble w(g, 3, 1, 0, std::vector<double>(15, 0.0));
  const std::vector<double> xi{1.25};
  const auto p = simulate_reference(g, w, DiffusionSpec::identity(1), xi);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(p.state(i, k)[0], 1.25);
}

TEST(Reference, TerminalIsGaussian) {
  const std::size_t m = 20000;
  const TimeGrid g = make_time_grid(2.0, 20);
  const auto w = sample_brownian(g, m, 1, 11);
  const std::vector<double> xi{0.5};
  const auto p = simulate_reference(g, w, DiffusionSpec::identity(1), xi);
  const auto x = path_statistic(p, g.steps, PathStatisticKind::current_value);
  double s = 0.0, s2 = 0.0;
  for (double v : x) { s += v; s2 += (v - 0.5) * (v - 0.5); }
  EXPECT_NEAR(s / m, 0.5, 4.0 * std::sqrt(2.0 / m));
  EXPECT_NEAR(s2 / m, 2.0, 4.0 * std::sqrt(2.0 * 4.0 / m));
}

TEST(Reference, RejectsMismatchedDimension) {
  const TimeGrid g = make_time_grid(1.0, 4);
  const auto w = sample_brownian(g, 3, 2, 0);
  const std::vector<double> xi{0.0};
  EXPECT_THROW(simulate_reference(g, w, DiffusionSpec::identity(1), xi), std::invalid_argument);
}

TEST(PathStatistic, CurrentValueAndRunningSup) {
  const TimeGrid g = make_time_grid(1.0, 2);
  const PathEnsemble p(g, 1, 1, {0.0}, {0.0, 3.0, -5.0});
  const std::vector<double> want_x{0.0, 3.0, -5.0}, want_sup{0.0, 3.0, 5.0};
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(path_statistic(p, k, PathStatisticKind::current_value)[0], want_x[k]);
    EXPECT_EQ(path_statistic(p, k, PathStatisticKind::running_sup)[0], want_sup[k]);
  }
  EXPECT_THROW(path_statistic(p, 3, PathStatisticKind::current_value), std::out_of_range);
  EXPECT_THROW(path_statistic(p, 0, PathStatisticKind::current_value, 1), std::out_of_range);
}

TEST(PathStatistic, RunningSupIsNondecreasing) {
  const TimeGrid g = make_time_grid(1.0, 30);
  const auto w = sample_brownian(g, 200, 1, 3);
  const std::vector<double> xi{0.0};
  const auto p = simulate_reference(g, w, DiffusionSpec::identity(1), xi);
  for (std::size_t i = 0; i < 200; ++i)
    for (std::size_t k = 1; k < g.size(); ++k) {
      EXPECT_GE(p.running_sup(i, k), p.running_sup(i, k - 1));
      EXPECT_GE(p.running_sup(i, k), std::abs(p.state(i, k)[0]));
    }
}

TEST(Norm, Euclidean) {
  const std::vector<double> v{3.0, 4.0};
  EXPECT_DOUBLE_EQ(euclidean_norm(v), 5.0);
}
