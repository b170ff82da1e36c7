#include "mfc/sample.hpp"

#include <vector>

namespace mfc {

ReferenceSample::ReferenceSample(Scenario scenario, std::size_t particles, std::uint64_t seed,
                                 std::optional<std::size_t> steps)
    : ReferenceSample(scenario,
                      sample_brownian(make_time_grid(scenario.horizon, steps.value_or(scenario.steps)),
                                      particles, scenario.dim, seed)) {}

ReferenceSample::ReferenceSample(Scenario scenario, BrownianEnsemble brownian)
    : scenario_(std::move(scenario)),
      brownian_(std::move(brownian)),
      paths_(std::make_shared<const PathEnsemble>(simulate_reference(
          brownian_.grid(), brownian_, scenario_.diffusion, scenario_.initial_point))),
      diffusion_(scenario_.diffusion) {}

void ReferenceSample::theta(std::size_t k, std::size_t i, std::span<const double> m,
                            std::span<const double> u, std::span<const double> v,
                            std::span<double> out) const {
  const std::size_t d = scenario_.dim;
  double f_buf[8];
  std::vector<double> f_heap;
  std::span<double> f;
  if (d <= 8) {
    f = std::span<double>(f_buf, d);
  } else {
    f_heap.resize(d);
    f = f_heap;
  }
  const auto x = paths_->state(i, k);
  scenario_.drift_at(x, m, u, v, f);
  diffusion_.apply_inverse(x, paths_->running_sup(i, k), f, out);
}

double ReferenceSample::hamiltonian(std::size_t k, std::size_t i, std::span<const double> m,
                                    std::span<const double> z, std::span<const double> u,
                                    std::span<const double> v) const {
  const std::size_t d = scenario_.dim;
  double t_buf[8];
  std::vector<double> t_heap;
  std::span<double> th;
  if (d <= 8) {
    th = std::span<double>(t_buf, d);
  } else {
    t_heap.resize(d);
    th = t_heap;
  }
  theta(k, i, m, u, v, th);
  double acc = scenario_.running_cost_at(paths_->state(i, k), m, u, v);
  for (std::size_t j = 0; j < d; ++j) acc += z[j] * th[j];
  return acc;
}

}  // namespace mfc
