#pragma once

#include <functional>
#include <memory>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfc/bsde.hpp"
#include "mfc/girsanov.hpp"
#include "mfc/hamiltonian.hpp"
#include "mfc/sample.hpp"

namespace mfc {

/// Feedback control u(t_k, x_t, |x|_t), projected into its action set.
class Control {
 public:
  using Rule = std::function<void(std::size_t k, std::span<const double> x, double running_sup,
                                  std::span<double> out)>;

  Control() = default;
  Control(std::string name, std::string kind, ActionGrid set, Rule rule);

  static Control constant(const ActionGrid& set, std::vector<double> action, std::string name = "");
  /// u = clamp(a + b x_0 + c |x|_t), componentwise in the action.
  static Control parametric(const ActionGrid& set, std::vector<double> a, std::vector<double> b,
                            std::vector<double> c, std::string name = "");
  /// Piecewise constant in (time index, bin of x_0); `edges` are the
  /// interior bin boundaries, `values` is laid out [(k * bins + b) * du].
  static Control table(const ActionGrid& set, std::vector<double> edges, std::size_t times,
                       std::vector<double> values, std::string name = "");
  /// `alt` on grid steps in [from, to), `base` elsewhere.
  static Control switched(const Control& base, const Control& alt, std::size_t from, std::size_t to,
                          std::string name = "");
  static Control feedback(const ActionGrid& set, Rule rule, std::string name);

  const std::string& name() const { return name_; }
  const std::string& kind() const { return kind_; }
  const ActionGrid& set() const { return set_; }
  std::size_t dim() const { return set_.dim(); }

  void evaluate(std::size_t k, std::span<const double> x, double running_sup, std::span<double> out) const;

 private:
  std::string name_;
  std::string kind_;
  ActionGrid set_;
  Rule rule_;
};

/// The control's actions along every reference path, grid times 0..N.
ActionPath sample_control(const ReferenceSample& sample, const Control& control);

/// H(t_k, x^i, m, z, u) = h + z . sigma^{-1} f
double hamiltonian(const ReferenceSample& sample, std::size_t k, std::size_t i, std::span<const double> m,
                   std::span<const double> z, std::span<const double> u);

struct HamiltonianMinimum {
  double value = 0.0;
  std::size_t index = 0;
  std::vector<double> action;
};

/// Exhaustive minimum over the grid; the lexicographically smallest argmin wins ties.
HamiltonianMinimum minimized_hamiltonian(const ReferenceSample& sample, std::size_t k, std::size_t i,
                                         std::span<const double> m, std::span<const double> z,
                                         const ActionGrid& grid);

struct PayoffResult {
  Estimate payoff;
  std::vector<double> terms;  // per particle; mean is the payoff, spread its error
  FixpointResult fixpoint;
  ActionPath u;
  ActionPath v;
};

/// J(u) = E[int L_t h dt + L_T g] at the control's fixed-point flow, time
/// integral by the trapezoid rule. Throws ConvergenceError when the fixed
/// point does not converge.
PayoffResult evaluate_payoff(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                             const FixpointOptions& options = {});
PayoffResult evaluate_payoff(const ReferenceSample& sample, const Control& u,
                             const FixpointOptions& options = {});
PayoffResult evaluate_payoff(const ReferenceSample& sample, const Control& u, const Control& v,
                             const FixpointOptions& options = {});

/// Payoff estimate of given actions at an already computed flow.
Estimate payoff_at_flow(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                        const MeasureFlow& flow);
/// Its per-particle terms, including the first-order effect of the noise in
/// the flow's statistics.
std::vector<double> payoff_terms(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                                 const MeasureFlow& flow);

struct PolicyOptions {
  double outer_tol = 1e-3;
  std::size_t max_outer = 20;
  FixpointOptions fixpoint;
  std::size_t residual_stride = 10;  // particles sampled for the Hamiltonian residual
};

struct OuterIterate {
  std::size_t iteration = 0;
  double distance = 0.0;  // D_T(mu^{k+1}, mu^k)
  double distance_se = 0.0;
  Estimate value;          // Y*_0 at mu^k
  std::size_t fixpoint_iterations = 0;
};

struct OptimizationReport {
  Control best;
  ActionPath best_path;
  Estimate payoff;    // J(best)
  Estimate value;     // Y*_0
  Estimate epsilon;   // J(best) - Y*_0
  double matching_residual = 0.0;
  double matching_se = 0.0;
  double hamiltonian_residual = 0.0;
  double grid_term = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  std::vector<OuterIterate> trace;
  bool inconsistent = false;  // epsilon below -3 SE
  std::shared_ptr<const BsdeSolution> bsde;
  FixpointResult fixpoint;  // matched flow of the best control
};

/// Feedback u(t_k, x) = argmin_u H(t_k, x, m_k, Z_k(x), u) with m from `stats`
/// ([k * K + j]) and Z from the regression coefficients of `bsde`.
Control argmin_feedback(const ReferenceSample& sample, const ActionGrid& grid,
                        std::shared_ptr<const std::vector<double>> stats,
                        std::shared_ptr<const BsdeSolution> bsde, std::string name = "argmin feedback");

/// BSDE with driver min_u H over the grid and terminal g, at a frozen flow.
BsdeSolution solve_min_bsde(const ReferenceSample& sample, const ActionGrid& grid, const MeasureFlow& flow,
                            const BasisSpec& basis);

/// Alternates the minimized-Hamiltonian BSDE at the current flow with the
/// fixed point of its argmin feedback, starting from the reference law.
OptimizationReport policy_iteration(const ReferenceSample& sample, const ActionGrid& grid,
                                    const BasisSpec& basis, const PolicyOptions& options = {});

/// T * L * r / 2 with r the grid resolution and L the largest difference
/// quotient of H between neighbouring grid points, sampled along the
/// ensemble at Z of `bsde` and the law of `flow`.
double grid_resolution_term(const ReferenceSample& sample, const ActionGrid& grid, const BsdeSolution& bsde,
                            const MeasureFlow& flow, std::size_t stride = 10);

struct FamilyRow {
  std::string name;
  Estimate payoff;
  bool converged = true;
};

struct NearOptimalReport {
  std::vector<FamilyRow> rows;
  std::size_t best = 0;
  Estimate value;    // Y*_0 used as the lower bound
  Estimate epsilon;  // J(best) - Y*_0
  double target = 0.0;
  bool success = false;
};

NearOptimalReport near_optimal_search(const ReferenceSample& sample, const std::vector<Control>& family,
                                      const Estimate& value, double epsilon_target,
                                      const FixpointOptions& options = {});

/// (1/M) sum_i dt #{k < N : u(t_k, x^i) != v(t_k, x^i)}, in [0, T].
double ekeland_distance(const ReferenceSample& sample, const Control& a, const Control& b);
double ekeland_distance(const ReferenceSample& sample, const ActionPath& a, const ActionPath& b);

struct IdentityCheck {
  PayoffResult result;
  Estimate y0;  // Y^u_0 of the payoff BSDE
  double gap = 0.0;
  double se = 0.0;
  bool ok = false;
};

/// Solves the fixed point and payoff BSDE of given actions and compares
/// Y^u_0 with J(u): ok when |Y^u_0 - J(u)| <= k * SE, the SE of the paired
/// per-particle difference (both estimates share the particles).
IdentityCheck payoff_identity(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                              const BasisSpec& basis, const FixpointOptions& options = {},
                              double se_multiplier = 3.0);

struct ComparisonRow {
  std::string name;
  Estimate y0;      // Y^u_0
  Estimate payoff;  // J(u)
  double identity_gap = 0.0;
  double identity_se = 0.0;
  bool identity_ok = false;
  double slack = 0.0;  // Y^u_0 - Y*_0
  double slack_se = 0.0;
  bool slack_ok = false;
};

struct ComparisonReport {
  Estimate value;
  std::vector<ComparisonRow> rows;
  bool all_ok = true;
};

/// Payoff identity |Y^u_0 - J(u)| <= k SE and comparison
/// Y*_0 <= Y^u_0 + k SE + grid_term. Controls off the action grid can beat
/// a grid minimum by at most the grid term.
ComparisonReport verify_comparison(const ReferenceSample& sample, const Estimate& value,
                                   const std::vector<Control>& controls, const BasisSpec& basis,
                                   const FixpointOptions& options = {}, double se_multiplier = 3.0,
                                   double grid_term = 0.0);

/// Five deterministic controls spanning the action box: the two corner
/// constants, an interior constant, an affine feedback and a mid-horizon
/// switch. `variant` 1 mirrors the choices (used for a second player).
std::vector<Control> standard_test_controls(const ActionGrid& set, std::size_t steps, int variant = 0);

/// clamp(a + b x_0 + c |x|_t) with a uniform over the box, b in [-1, 1] and
/// c in [-1/2, 1/2] per action component.
std::vector<Control> random_feedback_controls(const ActionGrid& set, std::size_t count, std::uint64_t seed);

}  // namespace mfc
