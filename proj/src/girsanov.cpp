#include "mfc/girsanov.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mfc {

DensityProcess::DensityProcess(std::size_t times, std::size_t particles, std::vector<double> log_density)
    : times_(times), particles_(particles), log_(std::move(log_density)) {
  if (log_.size() != times_ * particles_) throw std::invalid_argument("density process: wrong array size");
  mean_.resize(times_);
  std::vector<double> w(particles_);
  for (std::size_t k = 0; k < times_; ++k) {
    for (std::size_t i = 0; i < particles_; ++i) {
      const double l = log_[k * particles_ + i];
      max_abs_log_ = std::max(max_abs_log_, std::abs(l));
      w[i] = std::exp(l);
    }
    mean_[k] = sample_mean(w);
  }
  if (times_ > 0) {
    double m2 = 0.0, m4 = 0.0;
    for (std::size_t i = 0; i < particles_; ++i) {
      const double l = log_[(times_ - 1) * particles_ + i];
      m2 += std::exp(2.0 * l);
      m4 += std::exp(4.0 * l);
    }
    moment2_ = m2 / static_cast<double>(particles_);
    moment4_ = m4 / static_cast<double>(particles_);
  }
}

std::vector<double> DensityProcess::weights(std::size_t k) const {
  std::vector<double> w(particles_);
  for (std::size_t i = 0; i < particles_; ++i) w[i] = std::exp(log_[k * particles_ + i]);
  return w;
}

std::vector<double> DensityProcess::all_weights() const {
  std::vector<double> w(log_.size());
  std::transform(log_.begin(), log_.end(), w.begin(), [](double l) { return std::exp(l); });
  return w;
}

DensityProcess density_process(const PathEnsemble& paths, const BrownianEnsemble& brownian,
                               const DriftEvaluator& drift, const DiffusionEvaluator& sigma) {
  const std::size_t m = paths.particles();
  const std::size_t d = paths.dim();
  const std::size_t n = paths.grid().size();
  const double dt = paths.grid().dt;
  if (brownian.particles() != m || brownian.dim() != d || brownian.grid().steps + 1 != n) {
    throw std::invalid_argument("density_process: ensemble and increments do not match");
  }
  std::vector<double> logs(n * m, 0.0);
  std::vector<double> f(d), theta(d);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      drift(k, i, f);
      sigma.apply_inverse(paths.state(i, k), paths.running_sup(i, k), f, theta);
      const auto dw = brownian.increment(i, k);
      double dot = 0.0, sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += theta[j] * dw[j];
        sq += theta[j] * theta[j];
      }
      if (!std::isfinite(dot) || !std::isfinite(sq)) {
        std::ostringstream msg;
        msg << "density_process: non-finite drift at particle " << i << ", step " << k;
        throw NumericalError(msg.str());
      }
      acc += dot - 0.5 * sq * dt;
      logs[(k + 1) * m + i] = acc;
    }
  }
  return DensityProcess(n, m, std::move(logs));
}

Estimate reweighted_expectation(std::span<const double> weights, std::span<const double> values) {
  if (weights.size() != values.size()) {
    throw std::invalid_argument("reweighted_expectation: weights and values differ in length");
  }
  std::vector<double> prod(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) prod[i] = weights[i] * values[i];
  return sample_mean(prod);
}

DriftEvaluator scenario_drift(const ReferenceSample& sample, std::span<const double> stats,
                              const ActionPath& u, const ActionPath& v) {
  const std::size_t kstat = sample.scenario().statistic_count();
  if (stats.size() != sample.grid().size() * kstat) {
    throw std::invalid_argument("scenario_drift: statistics table has wrong size");
  }
  if (u.dim != sample.scenario().u_dim() || v.dim != sample.scenario().v_dim()) {
    throw std::invalid_argument("scenario_drift: action dimensions do not match the scenario");
  }
  return [&sample, stats, &u, &v, kstat](std::size_t k, std::size_t i, std::span<double> out) {
    sample.scenario().drift_at(sample.state(i, k), stats.subspan(k * kstat, kstat), u.at(k, i),
                               v.at(k, i), out);
  };
}

std::vector<double> statistics_table(const MeasureFlow& flow) {
  const std::size_t kstat = flow.registry().size();
  std::vector<double> table(flow.times() * kstat);
  for (std::size_t k = 0; k < flow.times(); ++k) {
    const auto s = flow.statistics(k);
    std::copy(s.begin(), s.end(), table.begin() + static_cast<std::ptrdiff_t>(k * kstat));
  }
  return table;
}

FixpointResult fixpoint_measure_flow(const ReferenceSample& sample, const ActionPath& u,
                                     const ActionPath& v, const FixpointOptions& options) {
  const auto& registry = sample.scenario().statistics;
  const std::size_t last = sample.grid().size() - 1;

  FixpointResult result;
  result.diagnostics.tol = options.tol;
  MeasureFlow previous = MeasureFlow::reference(sample.shared_paths(), registry);
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    const std::vector<double> stats = statistics_table(previous);
    const DriftEvaluator drift = scenario_drift(sample, stats, u, v);
    DensityProcess density = density_process(sample.paths(), sample.brownian(), drift, sample.diffusion());
    MeasureFlow next(sample.shared_paths(), density.all_weights(), registry);
    const TVEstimate dist = tv_pathspace(next, previous, last);

    auto& diag = result.diagnostics;
    if (!diag.distances.empty() && diag.distances.back() > 0.0) {
      diag.ratios.push_back(dist.value / diag.distances.back());
    }
    diag.distances.push_back(dist.value);
    diag.distance_se.push_back(dist.se);
    diag.iterations = it;
    result.flow = std::move(next);
    result.density = std::move(density);
    if (dist.value < options.tol) {
      diag.converged = true;
      return result;
    }
    previous = result.flow;
  }
  return result;
}

ContractionReport contraction_report(const FixpointDiagnostics& diag) {
  ContractionReport report;
  const auto& d = diag.distances;
  auto above_noise = [&](std::size_t k) { return d[k] > 5.0 * diag.distance_se[k] && d[k] > 0.0; };
  std::vector<std::pair<double, double>> fit;
  for (std::size_t k = 0; k < d.size(); ++k) {
    ContractionRow row{k, d[k], diag.distance_se[k], std::nullopt};
    if (k > 0 && above_noise(k - 1) && above_noise(k)) {
      row.ratio = d[k] / d[k - 1];
      if (d[k] > d[k - 1] + 3.0 * combined_se(diag.distance_se[k], diag.distance_se[k - 1])) {
        report.growth_flag = true;
      }
    }
    if (above_noise(k)) fit.emplace_back(static_cast<double>(k), std::log(d[k]));
    report.rows.push_back(row);
  }
  if (fit.size() >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [x, y] : fit) {
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double n = static_cast<double>(fit.size());
    const double denom = n * sxx - sx * sx;
    if (denom > 0.0) report.geometric_rate = std::exp((n * sxy - sx * sy) / denom);
  }
  const bool any_ratio = std::any_of(report.rows.begin(), report.rows.end(),
                                     [](const ContractionRow& r) { return r.ratio.has_value(); });
  if (!any_ratio) {
    report.note = d.size() <= 2 ? "ratio undefined: the map reached its fixed point in one application"
                                : "ratio undefined: successive distances are within Monte Carlo noise";
  } else if (report.growth_flag) {
    report.note = "distance grew beyond noise between successive iterations";
  } else {
    report.note = "distances decay";
  }
  return report;
}

std::vector<double> weight_score(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                                 const MeasureFlow& flow) {
  const Scenario& s = sample.scenario();
  const std::size_t kstat = s.statistic_count();
  if (kstat == 0 || !s.drift_depends_on_measure()) return {};
  const std::size_t m = sample.particles();
  const std::size_t steps = sample.grid().steps;
  const std::size_t d = sample.dim();
  const double dt = sample.grid().dt;
  std::vector<double> out(steps * m * kstat, 0.0);
  std::vector<double> shifted(kstat), th(d), up(d), down(d);
  for (std::size_t k = 0; k < steps; ++k) {
    const auto base = flow.statistics(k);
    for (std::size_t i = 0; i < m; ++i) {
      sample.theta(k, i, base, u.at(k, i), v.at(k, i), th);
      const auto dw = sample.brownian().increment(i, k);
      std::copy(base.begin(), base.end(), shifted.begin());
      for (std::size_t j = 0; j < kstat; ++j) {
        const double eta = 1e-5 * (1.0 + std::abs(base[j]));
        shifted[j] = base[j] + eta;
        sample.theta(k, i, shifted, u.at(k, i), v.at(k, i), up);
        shifted[j] = base[j] - eta;
        sample.theta(k, i, shifted, u.at(k, i), v.at(k, i), down);
        shifted[j] = base[j];
        double acc = 0.0;
        for (std::size_t r = 0; r < d; ++r) acc += (up[r] - down[r]) / (2.0 * eta) * (dw[r] - th[r] * dt);
        out[(k * m + i) * kstat + j] = acc;
      }
    }
  }
  return out;
}

std::vector<double> fixpoint_influence(const MeasureFlow& flow, std::span<const double> score,
                                       std::span<const double> sensitivity) {
  if (score.empty()) return statistic_influence(flow, sensitivity);
  const std::size_t m = flow.particles();
  const std::size_t n = flow.times();
  const std::size_t kstat = flow.registry().size();
  // c~_k = c_k + (1/M) sum_i score_{k,i} sum_{k' > k} L_{k',i} c~_{k'} . psi(x_{k',i})
  std::vector<double> total(sensitivity.begin(), sensitivity.end());
  std::vector<double> ahead(m, 0.0);
  for (std::size_t k = n; k-- > 0;) {
    if (k + 1 < n) {
      for (std::size_t j = 0; j < kstat; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += score[(k * m + i) * kstat + j] * ahead[i];
        total[k * kstat + j] += acc / static_cast<double>(m);
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      const auto x = flow.paths().state(i, k);
      double acc = 0.0;
      for (std::size_t j = 0; j < kstat; ++j) acc += total[k * kstat + j] * flow.registry()[j](x);
      ahead[i] += flow.weight(k, i) * acc;
    }
  }
  return statistic_influence(flow, total);
}

}  // namespace mfc
