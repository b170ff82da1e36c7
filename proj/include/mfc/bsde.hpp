#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mfc/measure.hpp"
#include "mfc/sample.hpp"

namespace mfc {

/// Regression basis for conditional expectations given F_t: per-variable
/// standardized monomials up to `degree` over x_t (and |x|_t if requested).
struct BasisSpec {
  std::size_t degree = 2;
  bool use_running_sup = false;
  bool bounded_features = false;  // adds tanh of each standardized variable
  double ridge = 1e-8;

  std::string describe() const;
};

/// Feature map at one grid time. Variables that do not vary across the
/// ensemble (all of them at t = 0) are dropped, leaving the constant.
class FeatureMap {
 public:
  FeatureMap() = default;
  static FeatureMap fit(const PathEnsemble& paths, std::size_t t_index, const BasisSpec& basis);

  std::size_t size() const { return size_; }
  void evaluate(std::span<const double> x, double running_sup, std::span<double> out) const;

 private:
  BasisSpec basis_;
  std::size_t dim_ = 0;
  std::vector<double> center_;
  std::vector<double> scale_;
  std::vector<bool> active_;
  std::size_t size_ = 1;
};

struct RegressionResult {
  Eigen::VectorXd coefficients;
  std::vector<double> fitted;
  double residual_norm = 0.0;  // root mean square residual
};

/// Ridge least squares of `values` on the rows of `features` (M x p):
/// minimizes |y - X b|^2 / M + ridge |b|^2, constant columns unpenalized. With ridge == 0 a
/// rank-deficient design is an error.
RegressionResult regress_conditional(std::span<const double> values, const Eigen::MatrixXd& features,
                                     double ridge);

/// Backward pair (Y, Z) on the reference ensemble.
struct BsdeSolution {
  std::size_t times = 0;
  std::size_t particles = 0;
  std::size_t dim = 0;
  std::vector<double> y;  // [k * M + i], k = 0..N
  std::vector<double> z;  // [(k * M + i) * d], k = 0..N-1
  Estimate y0;
  BasisSpec basis;
  std::vector<FeatureMap> feature_maps;         // per step
  std::vector<Eigen::MatrixXd> z_coefficients;  // per step, p x d
  std::vector<double> residual_norms;           // per step
  bool control_features = false;                // z_at unavailable when set
  std::vector<double> y0_terms;                 // per particle; their spread gives y0.se

  double Y(std::size_t k, std::size_t i) const { return y[k * particles + i]; }
  std::span<const double> Z(std::size_t k, std::size_t i) const {
    return {z.data() + (k * particles + i) * dim, dim};
  }
  /// Regressed Z_k as a function of the state; k = N reuses step N-1.
  void z_at(std::size_t k, std::span<const double> x, double running_sup, std::span<double> out) const;
};

/// Driver value at (time index, particle, z); also writes its gradient in z
/// to `grad` unless `grad` is empty.
using DriverEvaluator =
    std::function<double(std::size_t k, std::size_t i, std::span<const double> z, std::span<double> grad)>;

/// Y_N = terminal; for k = N-1..0 regress Y_{k+1} jointly on features of
/// x_k and features times dW_k / sqrt(dt): the first block is E[Y_{k+1} | F_k],
/// the second gives Z_k = E[Y_{k+1} dW_k | F_k] / dt. Then
/// Y_k = E[Y_{k+1} | F_k] + driver(k, Z_k) dt.
BsdeSolution solve_driver_bsde(const ReferenceSample& sample, const DriverEvaluator& driver,
                               std::span<const double> terminal, const BasisSpec& basis);

/// Extra regressors per (time index, particle), `count` values each.
struct ExtraFeatures {
  std::size_t count = 0;
  std::function<void(std::size_t k, std::size_t i, std::span<double> out)> evaluate;
};

/// As above with `extra` appended to the state features. For a fixed control
/// the components of sigma^{-1} f are used, so the Z-part of the driver is
/// reproduced in mean even when the feedback is not polynomial in the state.
BsdeSolution solve_driver_bsde(const ReferenceSample& sample, const DriverEvaluator& driver,
                               std::span<const double> terminal, const BasisSpec& basis,
                               const ExtraFeatures& extra);

/// Driver with the law statistics m passed explicitly.
using LawDriver = std::function<double(std::size_t k, std::size_t i, std::span<const double> m,
                                       std::span<const double> z, std::span<double> grad)>;

/// Driver and terminal g(x_T, mu_T) read the law from `flow`. When the
/// scenario depends on the law, the error of Y_0 also carries the
/// first-order effect of the noise in the flow's statistics.
/// Maps sensitivities d Y_0 / d m_k[j] to per-particle influence terms.
using LawInfluence = std::function<std::vector<double>(std::span<const double> sensitivity)>;

BsdeSolution solve_flow_bsde(const ReferenceSample& sample, const LawDriver& driver, const MeasureFlow& flow,
                             const BasisSpec& basis, const ExtraFeatures& extra = {},
                             const LawInfluence& influence = {});

/// g(x_T, mu_T) per particle, with the law read from `flow`.
std::vector<double> terminal_values(const ReferenceSample& sample, const MeasureFlow& flow);

/// The payoff BSDE of a fixed control (pair): driver H(t, x, mu_t, z, u_t, v_t)
/// with mu the control's own fixed-point flow, terminal g(x_T, mu_T).
BsdeSolution solve_linear_bsde(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                               const MeasureFlow& flow, const BasisSpec& basis);

}  // namespace mfc
