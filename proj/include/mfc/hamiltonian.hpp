#pragma once

#include <span>
#include <vector>

#include "mfc/core.hpp"
#include "mfc/scenario.hpp"

namespace mfc {

struct GridMinimum {
  double value = 0.0;
  std::size_t index = 0;
};

/// Pointwise envelopes of the game Hamiltonian over finite grids.
/// lower = max_v min_u H attained at (lower_u, lower_v);
/// upper = min_u max_v H attained at (upper_u, upper_v).
struct Envelopes {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t lower_u = 0, lower_v = 0;
  std::size_t upper_u = 0, upper_v = 0;

  double gap() const { return upper - lower; }
  /// Minimax choice for the minimizer, maximin choice for the maximizer.
  std::size_t saddle_u() const { return upper_u; }
  std::size_t saddle_v() const { return lower_v; }
};

/// H(t, x, m, z, u_j, v_l) = h + z . sigma^{-1} f tabulated over the action
/// grids at one evaluation point. When the drift is affine in the actions
/// the table is assembled from per-action pieces; otherwise every entry is
/// evaluated directly.
class GridHamiltonian {
 public:
  GridHamiltonian(const Scenario& scenario, const DiffusionEvaluator& sigma, const ActionGrid& u,
                  const ActionGrid* v = nullptr);

  void prepare(std::span<const double> x, double running_sup, std::span<const double> m,
               std::span<const double> z);

  std::size_t u_size() const { return nu_; }
  std::size_t v_size() const { return nv_; }
  double operator()(std::size_t j, std::size_t l = 0) const;
  /// sigma^{-1} f at (u_j, v_l): the gradient of H(j, l) in z.
  void theta(std::size_t j, std::size_t l, std::span<double> out) const;

  /// min over u at the first v-point; ties go to the lexicographically smallest action.
  GridMinimum minimum() const;
  Envelopes envelopes() const;

 private:
  const Scenario* scenario_;
  const DiffusionEvaluator* sigma_;
  const ActionGrid* u_grid_;
  const ActionGrid* v_grid_;
  std::size_t nu_ = 0, nv_ = 1;
  bool affine_ = true;
  std::vector<double> hu_, hv_;      // action parts of h
  std::vector<double> cu_, cv_;      // C_u u_j, C_v v_l  (d per point)
  std::vector<double> cross_;        // quv u_j . v_l, [j * nv + l]
  std::vector<double> a_, b_;        // per-point pieces after prepare()
  double c0_ = 0.0;
  std::vector<double> x_, m_, z_;
  double sup_ = 0.0;
  std::vector<double> e_, col_, y_, f0_, u0_, v0_;
};

}  // namespace mfc
