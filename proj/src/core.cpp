#include "mfc/core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace mfc {

TimeGrid make_time_grid(double horizon, std::size_t steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw std::invalid_argument("time grid: horizon must be positive");
  }
  if (steps < 1) {
    throw std::invalid_argument("time grid: step count must be >= 1");
  }
  TimeGrid grid;
  grid.horizon = horizon;
  grid.steps = steps;
  grid.dt = horizon / static_cast<double>(steps);
  grid.times.resize(steps + 1);
  for (std::size_t k = 0; k < steps; ++k) {
    grid.times[k] = grid.dt * static_cast<double>(k);
  }
  grid.times[steps] = horizon;
  return grid;
}

BrownianEnsemble::BrownianEnsemble(TimeGrid grid, std::size_t particles,
                                   std::size_t dim, std::uint64_t seed,
                                   std::vector<double> increments)
    : grid_(std::move(grid)),
      particles_(particles),
      dim_(dim),
      seed_(seed),
      increments_(std::move(increments)) {
  if (increments_.size() != particles_ * grid_.steps * dim_) {
    throw std::invalid_argument("brownian ensemble: increment array has wrong size");
  }
}

BrownianEnsemble sample_brownian(const TimeGrid& grid, std::size_t particles,
                                 std::size_t dim, std::uint64_t seed) {
  if (particles < 1) throw std::invalid_argument("sample_brownian: M must be >= 1");
  if (dim < 1) throw std::invalid_argument("sample_brownian: d must be >= 1");
  const double scale = std::sqrt(grid.dt);
  const std::size_t per_particle = grid.steps * dim;
  std::vector<double> increments(particles * per_particle);
  const auto lo = static_cast<std::uint32_t>(seed & 0xffffffffULL);
  const auto hi = static_cast<std::uint32_t>(seed >> 32);
  for (std::size_t i = 0; i < particles; ++i) {
    std::seed_seq seq{lo, hi, static_cast<std::uint32_t>(i),
                      static_cast<std::uint32_t>(static_cast<std::uint64_t>(i) >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    double* out = increments.data() + i * per_particle;
    for (std::size_t j = 0; j < per_particle; ++j) out[j] = scale * normal(rng);
  }
  return BrownianEnsemble(grid, particles, dim, seed, std::move(increments));
}

DiffusionSpec DiffusionSpec::identity(std::size_t dim) {
  DiffusionSpec spec;
  spec.base = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                        static_cast<Eigen::Index>(dim));
  return spec;
}

double DiffusionSpec::scale(std::span<const double> x, double running_sup) const {
  switch (kind) {
    case Kind::constant:
      return 1.0;
    case Kind::affine_state:
      return scale_offset + scale_slope * euclidean_norm(x);
    case Kind::sup_modulated:
      return scale_offset + scale_slope * running_sup;
  }
  return 1.0;
}

bool DiffusionSpec::operator==(const DiffusionSpec& other) const {
  return kind == other.kind && base.rows() == other.base.rows() &&
         base.cols() == other.base.cols() && base == other.base &&
         scale_offset == other.scale_offset && scale_slope == other.scale_slope &&
         alpha == other.alpha;
}

DiffusionEvaluator::DiffusionEvaluator(const DiffusionSpec& spec) : spec_(spec) {
  if (spec_.base.rows() != spec_.base.cols() || spec_.base.rows() == 0) {
    throw std::invalid_argument("diffusion: base matrix must be square and nonempty");
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(spec_.base);
  base_singular_ = !lu.isInvertible();
  if (!base_singular_) base_inverse_ = lu.inverse();
}

void DiffusionEvaluator::apply(std::span<const double> x, double running_sup,
                               std::span<const double> in,
                               std::span<double> out) const {
  const double c = spec_.scale(x, running_sup);
  const auto d = static_cast<Eigen::Index>(in.size());
  Eigen::Map<const Eigen::VectorXd> v(in.data(), d);
  Eigen::Map<Eigen::VectorXd> r(out.data(), d);
  r.noalias() = c * (spec_.base * v);
}

void DiffusionEvaluator::apply_inverse(std::span<const double> x, double running_sup,
                                       std::span<const double> in,
                                       std::span<double> out) const {
  const double c = spec_.scale(x, running_sup);
  if (base_singular_ || c == 0.0 || !std::isfinite(c)) {
    std::ostringstream msg;
    msg << "diffusion is not invertible at x = (";
    for (std::size_t j = 0; j < x.size(); ++j) msg << (j ? ", " : "") << x[j];
    msg << "), |w|_t = " << running_sup;
    throw NumericalError(msg.str());
  }
  const auto d = static_cast<Eigen::Index>(in.size());
  if (d == 1) {
    out[0] = base_inverse_(0, 0) * in[0] / c;
    return;
  }
  Eigen::Map<const Eigen::VectorXd> v(in.data(), d);
  Eigen::Map<Eigen::VectorXd> r(out.data(), d);
  r.noalias() = (base_inverse_ * v) / c;
}

PathEnsemble::PathEnsemble(TimeGrid grid, std::size_t particles, std::size_t dim,
                           std::vector<double> initial, std::vector<double> values)
    : grid_(std::move(grid)),
      particles_(particles),
      dim_(dim),
      initial_(std::move(initial)),
      values_(std::move(values)) {
  const std::size_t n = grid_.size();
  if (values_.size() != particles_ * n * dim_ || initial_.size() != dim_) {
    throw std::invalid_argument("path ensemble: inconsistent array sizes");
  }
  sup_.resize(particles_ * n);
  for (std::size_t i = 0; i < particles_; ++i) {
    double running = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      running = std::max(running, euclidean_norm(state(i, k)));
      sup_[i * n + k] = running;
    }
  }
}

PathEnsemble simulate_reference(const TimeGrid& grid, const BrownianEnsemble& brownian,
                                const DiffusionSpec& sigma, std::span<const double> xi) {
  const std::size_t d = xi.size();
  if (brownian.dim() != d || sigma.dim() != d) {
    throw std::invalid_argument("simulate_reference: dimension mismatch");
  }
  if (brownian.grid().steps != grid.steps) {
    throw std::invalid_argument("simulate_reference: grid mismatch");
  }
  const DiffusionEvaluator diffusion(sigma);
  const std::size_t m = brownian.particles();
  const std::size_t n = grid.size();
  std::vector<double> values(m * n * d);
  std::vector<double> step(d);
  std::vector<double> probe(d);
  for (std::size_t i = 0; i < m; ++i) {
    double* path = values.data() + i * n * d;
    std::copy(xi.begin(), xi.end(), path);
    double running = euclidean_norm(xi);
    for (std::size_t k = 0; k < grid.steps; ++k) {
      std::span<const double> x(path + k * d, d);
      // Invertibility is part of (A2); check it on every visited state.
      diffusion.apply_inverse(x, running, x, probe);
      diffusion.apply(x, running, brownian.increment(i, k), step);
      for (std::size_t j = 0; j < d; ++j) path[(k + 1) * d + j] = x[j] + step[j];
      running = std::max(running, euclidean_norm({path + (k + 1) * d, d}));
    }
  }
  return PathEnsemble(grid, m, d, std::vector<double>(xi.begin(), xi.end()),
                      std::move(values));
}

std::vector<double> path_statistic(const PathEnsemble& paths, std::size_t t_index,
                                   PathStatisticKind kind, std::size_t component) {
  if (t_index >= paths.grid().size()) {
    throw std::out_of_range("path_statistic: time index out of range");
  }
  if (component >= paths.dim()) {
    throw std::out_of_range("path_statistic: component out of range");
  }
  std::vector<double> out(paths.particles());
  for (std::size_t i = 0; i < paths.particles(); ++i) {
    out[i] = kind == PathStatisticKind::current_value ? paths.state(i, t_index)[component]
                                                      : paths.running_sup(i, t_index);
  }
  return out;
}

double euclidean_norm(std::span<const double> v) {
  if (v.size() == 1) return std::abs(v[0]);
  double s = 0.0;
  for (double e : v) s += e * e;
  return std::sqrt(s);
}

}  // namespace mfc
