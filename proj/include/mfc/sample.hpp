#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mfc/core.hpp"
#include "mfc/scenario.hpp"

namespace mfc {

/// Action values of one player along the reference ensemble, for grid
/// times 0..N. A zero-dimensional path stands for "no second player".
struct ActionPath {
  std::size_t dim = 0;
  std::size_t times = 0;
  std::size_t particles = 0;
  std::vector<double> values;

  ActionPath() = default;
  ActionPath(std::size_t d, std::size_t n_times, std::size_t m)
      : dim(d), times(n_times), particles(m), values(d * n_times * m, 0.0) {}

  std::span<const double> at(std::size_t k, std::size_t i) const {
    return {values.data() + (k * particles + i) * dim, dim};
  }
  std::span<double> at(std::size_t k, std::size_t i) {
    return {values.data() + (k * particles + i) * dim, dim};
  }
};

/// The reference law P for one scenario: the stored Brownian increments and
/// the driftless paths they generate. Every control is evaluated by
/// reweighting this one ensemble.
class ReferenceSample {
 public:
  ReferenceSample(Scenario scenario, std::size_t particles, std::uint64_t seed,
                  std::optional<std::size_t> steps = std::nullopt);
  /// Uses caller-supplied increments (e.g. forced zero noise).
  ReferenceSample(Scenario scenario, BrownianEnsemble brownian);

  const Scenario& scenario() const { return scenario_; }
  const TimeGrid& grid() const { return brownian_.grid(); }
  const BrownianEnsemble& brownian() const { return brownian_; }
  const PathEnsemble& paths() const { return *paths_; }
  std::shared_ptr<const PathEnsemble> shared_paths() const { return paths_; }
  const DiffusionEvaluator& diffusion() const { return diffusion_; }
  std::size_t particles() const { return brownian_.particles(); }
  std::size_t dim() const { return scenario_.dim; }
  std::uint64_t seed() const { return brownian_.seed(); }

  std::span<const double> state(std::size_t i, std::size_t k) const { return paths_->state(i, k); }
  double running_sup(std::size_t i, std::size_t k) const { return paths_->running_sup(i, k); }

  /// theta = sigma^{-1} f at particle i, time index k.
  void theta(std::size_t k, std::size_t i, std::span<const double> m,
             std::span<const double> u, std::span<const double> v, std::span<double> out) const;
  /// H = h + z . sigma^{-1} f
  double hamiltonian(std::size_t k, std::size_t i, std::span<const double> m,
                     std::span<const double> z, std::span<const double> u,
                     std::span<const double> v) const;

  ActionPath empty_actions() const { return ActionPath(0, grid().size(), particles()); }

 private:
  Scenario scenario_;
  BrownianEnsemble brownian_;
  std::shared_ptr<const PathEnsemble> paths_;
  DiffusionEvaluator diffusion_;
};

}  // namespace mfc
