#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfc/measure.hpp"
#include "mfc/sample.hpp"

namespace mfc {

/// Girsanov density L_t = E(int theta dW)_t per particle, stored as log L.
class DensityProcess {
 public:
  DensityProcess() = default;
  DensityProcess(std::size_t times, std::size_t particles, std::vector<double> log_density);

  std::size_t times() const { return times_; }
  std::size_t particles() const { return particles_; }
  double log_density(std::size_t k, std::size_t i) const { return log_[k * particles_ + i]; }
  std::span<const double> log_density(std::size_t k) const {
    return {log_.data() + k * particles_, particles_};
  }
  /// L_t[i] for all particles at time index k.
  std::vector<double> weights(std::size_t k) const;
  /// All weights laid out [k * M + i].
  std::vector<double> all_weights() const;

  /// Empirical E[L_t] with standard error, per time index.
  const std::vector<Estimate>& mean_density() const { return mean_; }
  double max_abs_log() const { return max_abs_log_; }
  /// Empirical E[L_T^2] and E[L_T^4].
  double second_moment() const { return moment2_; }
  double fourth_moment() const { return moment4_; }

 private:
  std::size_t times_ = 0;
  std::size_t particles_ = 0;
  std::vector<double> log_;
  std::vector<Estimate> mean_;
  double max_abs_log_ = 0.0;
  double moment2_ = 1.0;
  double moment4_ = 1.0;
};

/// log L_{k+1} = log L_k + theta_k . dW_k - |theta_k|^2 dt / 2 with
/// theta_k = sigma^{-1}(t_k, x) f evaluated at the left endpoint.
DensityProcess density_process(const PathEnsemble& paths, const BrownianEnsemble& brownian,
                               const DriftEvaluator& drift, const DiffusionEvaluator& sigma);

/// (1/M) sum_i L[i] v[i] with standard error.
Estimate reweighted_expectation(std::span<const double> weights, std::span<const double> values);

/// Scenario drift f(t_k, x^i, m_k, u, v) with the law frozen at `stats`
/// (laid out [k * K + j]) and the players' actions read from the paths.
DriftEvaluator scenario_drift(const ReferenceSample& sample, std::span<const double> stats,
                              const ActionPath& u, const ActionPath& v);

struct FixpointOptions {
  double tol = 1e-3;
  std::size_t max_iter = 50;
};

struct FixpointDiagnostics {
  /// Index k of the returned iterate Q_{k+1} with D(Q_{k+1}, Q_k) < tol:
  /// 0 when the first application of the map already reproduced its input.
  std::size_t iterations = 0;
  std::vector<double> distances;  // D_T(Q_{k+1}, Q_k)
  std::vector<double> distance_se;
  std::vector<double> ratios;  // distances[k+1] / distances[k]
  bool converged = false;
  double tol = 0.0;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, FixpointDiagnostics diag)
      : std::runtime_error(what), diagnostics(std::move(diag)) {}
  FixpointDiagnostics diagnostics;
};

struct FixpointResult {
  MeasureFlow flow;
  DensityProcess density;
  FixpointDiagnostics diagnostics;
};

/// Picard iteration Q_{k+1} = Phi(Q_k) from Q_0 = P for fixed actions.
/// Non-convergence is reported through diagnostics.converged.
FixpointResult fixpoint_measure_flow(const ReferenceSample& sample, const ActionPath& u,
                                     const ActionPath& v, const FixpointOptions& options = {});

/// Statistics table [k * K + j] of a flow.
std::vector<double> statistics_table(const MeasureFlow& flow);

struct ContractionRow {
  std::size_t iteration = 0;
  double distance = 0.0;
  double se = 0.0;
  std::optional<double> ratio;
};

struct ContractionReport {
  std::vector<ContractionRow> rows;
  /// exp(slope) of a least-squares fit of log distance against iteration.
  std::optional<double> geometric_rate;
  /// A ratio exceeded 1 while the distances stood above noise.
  bool growth_flag = false;
  std::string note;
};

ContractionReport contraction_report(const FixpointDiagnostics& diag);

/// Derivative of log L_{k+1} - log L_k in the statistics m_k of the law:
/// d theta_k / d m_k[j] . (dW_k - theta_k dt), laid out [(k * M + i) * K + j]
/// for k < N. Empty when the drift does not depend on the law.
std::vector<double> weight_score(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                                 const MeasureFlow& flow);

/// statistic_influence for a fixed-point flow: the sensitivities are first
/// carried through the dependence of later statistics on earlier ones via
/// the weights, using `score` from weight_score.
std::vector<double> fixpoint_influence(const MeasureFlow& flow, std::span<const double> score,
                                       std::span<const double> sensitivity);

}  // namespace mfc
