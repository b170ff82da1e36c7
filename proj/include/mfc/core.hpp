#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mfc {

/// Raised when a numerical precondition fails at run time (singular
/// diffusion, non-finite drift, failed regression).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniform partition of [0, T] into N steps.
struct TimeGrid {
  double horizon = 1.0;
  std::size_t steps = 1;
  double dt = 1.0;
  std::vector<double> times;

  std::size_t size() const { return times.size(); }
};

TimeGrid make_time_grid(double horizon, std::size_t steps);

/// Gaussian increments dW[i][k] in R^d with covariance dt * I.
///
/// Particle i draws from its own generator seeded from (seed, i), so the
/// ensemble does not depend on evaluation order.
class BrownianEnsemble {
 public:
  BrownianEnsemble() = default;
  BrownianEnsemble(TimeGrid grid, std::size_t particles, std::size_t dim,
                   std::uint64_t seed, std::vector<double> increments);

  const TimeGrid& grid() const { return grid_; }
  std::size_t particles() const { return particles_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  std::span<const double> increment(std::size_t i, std::size_t k) const {
    return {increments_.data() + (i * grid_.steps + k) * dim_, dim_};
  }
  const std::vector<double>& raw() const { return increments_; }

 private:
  TimeGrid grid_;
  std::size_t particles_ = 0;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> increments_;
};

BrownianEnsemble sample_brownian(const TimeGrid& grid, std::size_t particles,
                                 std::size_t dim, std::uint64_t seed);

/// Diffusion coefficient sigma(t, w) = c(t, x_t, |w|_t) * S, with S a
/// constant d x d matrix and c a scalar modulation.
struct DiffusionSpec {
  enum class Kind { constant, affine_state, sup_modulated };

  Kind kind = Kind::constant;
  Eigen::MatrixXd base = Eigen::MatrixXd::Identity(1, 1);
  /// c = scale_offset + scale_slope * |x_t|       (affine_state)
  /// c = scale_offset + scale_slope * |w|_t       (sup_modulated)
  double scale_offset = 1.0;
  double scale_slope = 0.0;
  /// Growth exponent of sigma^{-1}; carried for validation reports only.
  double alpha = 0.0;

  static DiffusionSpec identity(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(base.rows()); }
  double scale(std::span<const double> x, double running_sup) const;

  bool operator==(const DiffusionSpec& other) const;
};

/// Evaluates sigma and its inverse, caching S^{-1}.
class DiffusionEvaluator {
 public:
  explicit DiffusionEvaluator(const DiffusionSpec& spec);

  /// out = sigma(t, w) * in
  void apply(std::span<const double> x, double running_sup,
             std::span<const double> in, std::span<double> out) const;
  /// out = sigma(t, w)^{-1} * in; throws NumericalError when singular.
  void apply_inverse(std::span<const double> x, double running_sup,
                     std::span<const double> in, std::span<double> out) const;

  const DiffusionSpec& spec() const { return spec_; }

 private:
  DiffusionSpec spec_;
  Eigen::MatrixXd base_inverse_;
  bool base_singular_ = false;
};

/// Reference paths x[i][k] under P together with |x|_t.
class PathEnsemble {
 public:
  PathEnsemble() = default;
  PathEnsemble(TimeGrid grid, std::size_t particles, std::size_t dim,
               std::vector<double> initial, std::vector<double> values);

  const TimeGrid& grid() const { return grid_; }
  std::size_t particles() const { return particles_; }
  std::size_t dim() const { return dim_; }
  const std::vector<double>& initial_point() const { return initial_; }

  std::span<const double> state(std::size_t i, std::size_t k) const {
    return {values_.data() + (i * grid_.size() + k) * dim_, dim_};
  }
  double running_sup(std::size_t i, std::size_t k) const {
    return sup_[i * grid_.size() + k];
  }

 private:
  TimeGrid grid_;
  std::size_t particles_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> initial_;
  std::vector<double> values_;
  std::vector<double> sup_;
};

/// Euler-Maruyama for dx = sigma(t, x.) dW started at xi.
PathEnsemble simulate_reference(const TimeGrid& grid,
                                const BrownianEnsemble& brownian,
                                const DiffusionSpec& sigma,
                                std::span<const double> xi);

enum class PathStatisticKind { current_value, running_sup };

/// Per-particle x[i][k] (one component) or sup_{j<=k} |x[i][j]|.
std::vector<double> path_statistic(const PathEnsemble& paths,
                                   std::size_t t_index,
                                   PathStatisticKind kind,
                                   std::size_t component = 0);

double euclidean_norm(std::span<const double> v);

}  // namespace mfc
