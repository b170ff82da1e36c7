#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfc/core.hpp"
#include "mfc/scenario.hpp"

namespace mfc {

/// Monte Carlo estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

/// sqrt(a^2 + b^2)
double combined_se(double a, double b);

/// Mean and standard error of the sample mean of `values`.
Estimate sample_mean(std::span<const double> values);

/// Weighted-particle representation of t -> Q o x_t^{-1} on a reference
/// ensemble: particle i carries weight w_t[i] = dQ/dP restricted to F_t.
class MeasureFlow {
 public:
  MeasureFlow() = default;
  /// `weights` is laid out [k * M + i]; statistics of `registry` are cached.
  MeasureFlow(std::shared_ptr<const PathEnsemble> paths, std::vector<double> weights,
              std::vector<StatisticSpec> registry = {});
  /// The reference law itself (weights = 1).
  static MeasureFlow reference(std::shared_ptr<const PathEnsemble> paths,
                               std::vector<StatisticSpec> registry = {});

  const PathEnsemble& paths() const { return *paths_; }
  const std::shared_ptr<const PathEnsemble>& shared_paths() const { return paths_; }
  std::size_t particles() const { return paths_->particles(); }
  std::size_t times() const { return paths_->grid().size(); }

  std::span<const double> weights(std::size_t k) const {
    return {weights_.data() + k * particles(), particles()};
  }
  double weight(std::size_t k, std::size_t i) const { return weights_[k * particles() + i]; }

  const std::vector<StatisticSpec>& registry() const { return registry_; }
  /// m_t[j] = (1/M) sum_i w_t[i] psi_j(x_t^i) for every registered psi_j.
  std::span<const double> statistics(std::size_t k) const {
    return {stats_.data() + k * registry_.size(), registry_.size()};
  }

 private:
  std::shared_ptr<const PathEnsemble> paths_;
  std::vector<double> weights_;
  std::vector<StatisticSpec> registry_;
  std::vector<double> stats_;
};

/// (1/M) sum_i w_t[i] psi(x_t^i) for a registered statistic, with standard error.
Estimate weighted_statistic(const MeasureFlow& flow, std::size_t t_index,
                            const std::string& statistic);
/// Same for arbitrary per-particle values.
Estimate weighted_mean(const MeasureFlow& flow, std::size_t t_index,
                       std::span<const double> values);

/// Per-particle first-order influence of the flow's statistic estimates on a
/// functional with sensitivities c[k * K + j] = d functional / d m_k[j]:
/// sum_{k,j} c[k * K + j] (w_k[i] psi_j(x_k^i) - m_k[j]). Added to the
/// per-particle terms of a plug-in estimator, its spread then includes the
/// noise of the law. Dependence of the weights on the law is not included.
std::vector<double> statistic_influence(const MeasureFlow& flow, std::span<const double> sensitivity);

struct TVEstimate {
  enum class Kind { pathspace, marginal_binned };

  double value = 0.0;  // in [0, 2]
  double se = 0.0;
  Kind kind = Kind::pathspace;
  double bin_width = 0.0;  // marginal estimator only
};

/// D_t(A, B) = (1/M) sum_i |w^A_t[i] - w^B_t[i]| on a shared ensemble.
TVEstimate tv_pathspace(const MeasureFlow& a, const MeasureFlow& b, std::size_t t_index);

/// Total variation between the time-t marginals (d = 1), from weighted
/// histograms on a common equal-width binning of the pooled support.
TVEstimate tv_marginal(const MeasureFlow& a, const MeasureFlow& b, std::size_t t_index,
                       std::size_t bins = 64);

/// Drift b(t_k, x^i) in R^d along the ensemble.
using DriftEvaluator = std::function<void(std::size_t k, std::size_t i, std::span<double> out)>;

struct HellingerBound {
  Estimate gamma;  // E_{P^A}[Gamma_T]
  double bound = 0.0;  // 8 sqrt(gamma)
};

/// Gamma_T = (1/8) int (b_A - b_B)' a^{-1} (b_A - b_B) dt by the trapezoid
/// rule, averaged under flow A's terminal weights.
HellingerBound hellinger_bound(const MeasureFlow& flow_a, const DriftEvaluator& drift_a,
                               const DriftEvaluator& drift_b, const DiffusionEvaluator& sigma,
                               const TimeGrid& grid);

}  // namespace mfc
