#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mfc/control.hpp"

namespace mfc {

/// H(t_k, x^i, m, z, u, v) = h + z . sigma^{-1} f
double game_hamiltonian(const ReferenceSample& sample, std::size_t k, std::size_t i, std::span<const double> m,
                        std::span<const double> z, std::span<const double> u, std::span<const double> v);

/// Pointwise lower/upper envelopes over the two action grids.
Envelopes envelopes(const ReferenceSample& sample, std::size_t k, std::size_t i, std::span<const double> m,
                    std::span<const double> z, const ActionGrid& grid_u, const ActionGrid& grid_v);

struct IsaacsGap {
  double max_gap = 0.0;
  double mean_gap = 0.0;
  std::vector<double> profile_max;   // per grid step
  std::vector<double> profile_mean;  // per grid step
  std::size_t points = 0;
};

/// H_upper - H_lower at (t_k, x^i, Z_k^i) for every step and every
/// `stride`-th particle, with the law of `flow`.
IsaacsGap isaacs_gap(const ReferenceSample& sample, const MeasureFlow& flow, const BsdeSolution& z_source,
                     std::size_t stride = 1);

enum class Envelope { lower, upper };

/// BSDE with driver H_lower (or H_upper) at a frozen flow, terminal g.
BsdeSolution solve_envelope_bsde(const ReferenceSample& sample, const MeasureFlow& flow, Envelope which,
                                 const BasisSpec& basis);

struct GameOptions {
  double isaacs_tol = 1e-9;
  double outer_tol = 1e-3;
  std::size_t max_outer = 20;
  FixpointOptions fixpoint;
  std::size_t stride = 10;
  /// Largest |U| + |V| for which the terminal saddle condition is checked
  /// when g depends on the law (one fixed point per grid point).
  std::size_t terminal_check_cap = 42;
};

struct SaddleReport {
  bool isaacs_ok = false;
  IsaacsGap gap;       // at the reference law, Z of the lower BSDE
  IsaacsGap final_gap; // at the matched law
  Estimate lower_value;
  Estimate upper_value;
  std::string diagnostic;

  Control u_star;
  Control v_star;
  ActionPath u_path;
  ActionPath v_path;
  Estimate value;   // Y_0 of the envelope BSDE at the matched law
  Estimate payoff;  // J(u*, v*)
  bool converged = false;
  std::size_t iterations = 0;
  std::vector<OuterIterate> trace;
  double matching_residual = 0.0;
  double matching_se = 0.0;
  double grid_term = 0.0;
  bool terminal_ok = false;
  std::string terminal_note;
  std::shared_ptr<const BsdeSolution> bsde;
  FixpointResult fixpoint;
};

/// Saddle feedback pair at Z of `bsde` and statistics `stats`: u* is the
/// minimax argmin, v* the maximin argmax.
std::pair<Control, Control> saddle_feedback(const ReferenceSample& sample,
                                            std::shared_ptr<const std::vector<double>> stats,
                                            std::shared_ptr<const BsdeSolution> bsde);

/// Checks Isaacs first; when it fails reports both envelope values and
/// stops. Otherwise alternates the envelope BSDE with the fixed point of the
/// saddle feedback pair until the law is matched.
SaddleReport solve_game(const ReferenceSample& sample, const BasisSpec& basis, const GameOptions& options = {});

struct SlackEntry {
  std::string name;
  Estimate payoff;
  double slack = 0.0;
  double se = 0.0;
  bool ok = false;
};

struct SaddleVerification {
  Estimate center;                    // J(u*, v*)
  std::vector<SlackEntry> v_slacks;   // J(u*, v) - J(u*, v*), should be <= 0
  std::vector<SlackEntry> u_slacks;   // J(u, v*) - J(u*, v*), should be >= 0
  bool all_ok = true;
};

SaddleVerification verify_saddle(const ReferenceSample& sample, const SaddleReport& report,
                                 const std::vector<Control>& test_u, const std::vector<Control>& test_v,
                                 const FixpointOptions& options = {}, double se_multiplier = 3.0);

}  // namespace mfc
