#include "mfc/measure.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mfc {

double combined_se(double a, double b) { return std::sqrt(a * a + b * b); }

Estimate sample_mean(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) throw std::invalid_argument("sample_mean: empty sample");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  if (n == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double var = ss / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

MeasureFlow::MeasureFlow(std::shared_ptr<const PathEnsemble> paths, std::vector<double> weights,
                         std::vector<StatisticSpec> registry)
    : paths_(std::move(paths)), weights_(std::move(weights)), registry_(std::move(registry)) {
  if (!paths_) throw std::invalid_argument("measure flow: null ensemble");
  const std::size_t m = paths_->particles();
  const std::size_t n = paths_->grid().size();
  if (weights_.size() != m * n) throw std::invalid_argument("measure flow: weight array has wrong size");
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw NumericalError("measure flow: weights must be finite and nonnegative");
    }
  }
  const std::size_t kstat = registry_.size();
  stats_.assign(n * kstat, 0.0);
  if (kstat == 0) return;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) {
    double* out = stats_.data() + k * kstat;
    for (std::size_t i = 0; i < m; ++i) {
      const double w = weights_[k * m + i];
      const auto x = paths_->state(i, k);
      for (std::size_t j = 0; j < kstat; ++j) out[j] += w * registry_[j](x);
    }
    for (std::size_t j = 0; j < kstat; ++j) out[j] *= inv_m;
  }
}

std::vector<double> statistic_influence(const MeasureFlow& flow, std::span<const double> sensitivity) {
  const std::size_t m = flow.particles();
  const std::size_t n = flow.times();
  const std::size_t kstat = flow.registry().size();
  if (sensitivity.size() != n * kstat) throw std::invalid_argument("statistic_influence: sensitivity has wrong length");
  std::vector<double> out(m, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto stats = flow.statistics(k);
    for (std::size_t j = 0; j < kstat; ++j) {
      const double c = sensitivity[k * kstat + j];
      if (c == 0.0) continue;
      const StatisticSpec& psi = flow.registry()[j];
      for (std::size_t i = 0; i < m; ++i) {
        out[i] += c * (flow.weight(k, i) * psi(flow.paths().state(i, k)) - stats[j]);
      }
    }
  }
  return out;
}

MeasureFlow MeasureFlow::reference(std::shared_ptr<const PathEnsemble> paths,
                                   std::vector<StatisticSpec> registry) {
  const std::size_t size = paths->particles() * paths->grid().size();
  return MeasureFlow(std::move(paths), std::vector<double>(size, 1.0), std::move(registry));
}

Estimate weighted_mean(const MeasureFlow& flow, std::size_t t_index, std::span<const double> values) {
  if (t_index >= flow.times()) throw std::out_of_range("weighted_mean: time index out of range");
  if (values.size() != flow.particles()) throw std::invalid_argument("weighted_mean: length mismatch");
  const auto w = flow.weights(t_index);
  std::vector<double> prod(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) prod[i] = w[i] * values[i];
  return sample_mean(prod);
}

Estimate weighted_statistic(const MeasureFlow& flow, std::size_t t_index, const std::string& statistic) {
  const auto& reg = flow.registry();
  const auto it = std::find_if(reg.begin(), reg.end(),
                               [&](const StatisticSpec& s) { return s.name == statistic; });
  if (it == reg.end()) {
    throw std::invalid_argument("weighted_statistic: statistic '" + statistic + "' is not registered");
  }
  if (t_index >= flow.times()) throw std::out_of_range("weighted_statistic: time index out of range");
  std::vector<double> values(flow.particles());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = (*it)(flow.paths().state(i, t_index));
  return weighted_mean(flow, t_index, values);
}

TVEstimate tv_pathspace(const MeasureFlow& a, const MeasureFlow& b, std::size_t t_index) {
  if (a.shared_paths() != b.shared_paths()) {
    throw std::invalid_argument("tv_pathspace: flows must share one reference ensemble");
  }
  if (t_index >= a.times()) throw std::out_of_range("tv_pathspace: time index out of range");
  const auto wa = a.weights(t_index);
  const auto wb = b.weights(t_index);
  std::vector<double> diff(wa.size());
  for (std::size_t i = 0; i < wa.size(); ++i) diff[i] = std::abs(wa[i] - wb[i]);
  const Estimate e = sample_mean(diff);
  return {std::min(e.value, 2.0), e.se, TVEstimate::Kind::pathspace, 0.0};
}

TVEstimate tv_marginal(const MeasureFlow& a, const MeasureFlow& b, std::size_t t_index,
                       std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("tv_marginal: need at least 2 bins");
  if (a.particles() == 0 || b.particles() == 0) throw std::invalid_argument("tv_marginal: empty ensemble");
  if (a.paths().dim() != 1 || b.paths().dim() != 1) {
    throw std::invalid_argument("tv_marginal: binned estimator requires d = 1");
  }
  if (t_index >= a.times() || t_index >= b.times()) throw std::out_of_range("tv_marginal: time index out of range");

  const std::size_t ma = a.particles();
  const std::size_t mb = b.particles();
  double lo = a.paths().state(0, t_index)[0];
  double hi = lo;
  for (std::size_t i = 0; i < ma; ++i) {
    const double x = a.paths().state(i, t_index)[0];
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  for (std::size_t i = 0; i < mb; ++i) {
    const double x = b.paths().state(i, t_index)[0];
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  auto bin_of = [&](double x) -> std::size_t {
    if (width <= 0.0) return 0;
    const auto idx = static_cast<std::size_t>((x - lo) / width);
    return std::min(idx, bins - 1);
  };

  std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
  std::vector<std::size_t> bin_a(ma), bin_b(mb);
  const auto wa = a.weights(t_index);
  const auto wb = b.weights(t_index);
  for (std::size_t i = 0; i < ma; ++i) {
    bin_a[i] = bin_of(a.paths().state(i, t_index)[0]);
    pa[bin_a[i]] += wa[i] / static_cast<double>(ma);
  }
  for (std::size_t i = 0; i < mb; ++i) {
    bin_b[i] = bin_of(b.paths().state(i, t_index)[0]);
    pb[bin_b[i]] += wb[i] / static_cast<double>(mb);
  }
  double value = 0.0;
  std::vector<double> sign(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    value += std::abs(pa[k] - pb[k]);
    sign[k] = pa[k] >= pb[k] ? 1.0 : -1.0;
  }

  // Linearized standard error: value = mean of signed per-particle contributions.
  double se = 0.0;
  if (a.shared_paths() == b.shared_paths()) {
    std::vector<double> contrib(ma);
    for (std::size_t i = 0; i < ma; ++i) contrib[i] = sign[bin_a[i]] * (wa[i] - wb[i]);
    se = sample_mean(contrib).se;
  } else {
    std::vector<double> ca(ma), cb(mb);
    for (std::size_t i = 0; i < ma; ++i) ca[i] = sign[bin_a[i]] * wa[i];
    for (std::size_t i = 0; i < mb; ++i) cb[i] = sign[bin_b[i]] * wb[i];
    se = combined_se(sample_mean(ca).se, sample_mean(cb).se);
  }
  return {std::min(value, 2.0), se, TVEstimate::Kind::marginal_binned, width};
}

HellingerBound hellinger_bound(const MeasureFlow& flow_a, const DriftEvaluator& drift_a,
                               const DriftEvaluator& drift_b, const DiffusionEvaluator& sigma,
                               const TimeGrid& grid) {
  const auto& paths = flow_a.paths();
  const std::size_t m = paths.particles();
  const std::size_t d = paths.dim();
  const std::size_t n = grid.size();
  if (n != flow_a.times()) throw std::invalid_argument("hellinger_bound: grid mismatch");
  std::vector<double> ba(d), bb(d), delta(d), scaled(d);
  std::vector<double> integrand(m);
  const auto w_t = flow_a.weights(n - 1);
  for (std::size_t i = 0; i < m; ++i) {
    double gamma = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      drift_a(k, i, ba);
      drift_b(k, i, bb);
      for (std::size_t j = 0; j < d; ++j) delta[j] = ba[j] - bb[j];
      // delta' (sigma sigma')^{-1} delta = |sigma^{-1} delta|^2
      sigma.apply_inverse(paths.state(i, k), paths.running_sup(i, k), delta, scaled);
      double q = 0.0;
      for (double s : scaled) q += s * s;
      const double wk = (k == 0 || k + 1 == n) ? 0.5 * grid.dt : grid.dt;
      gamma += wk * q;
    }
    integrand[i] = w_t[i] * gamma / 8.0;
  }
  HellingerBound out;
  out.gamma = sample_mean(integrand);
  out.bound = 8.0 * std::sqrt(std::max(out.gamma.value, 0.0));
  return out;
}

}  // namespace mfc
