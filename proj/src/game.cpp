#include "mfc/game.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mfc {

namespace {

const ActionGrid& v_grid(const Scenario& s) {
  if (!s.actions_v) throw std::invalid_argument("game: scenario '" + s.name + "' has no second player");
  return *s.actions_v;
}

double envelope_value(const Envelopes& env, Envelope which) {
  return which == Envelope::lower ? env.lower : env.upper;
}

double game_grid_term(const ReferenceSample& sample, const BsdeSolution& bsde, const MeasureFlow& flow,
                      std::size_t stride) {
  const Scenario& s = sample.scenario();
  const ActionGrid& gu = s.actions_u;
  const ActionGrid& gv = v_grid(s);
  auto neighbours = [](const ActionGrid& g) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const double res = g.resolution();
    for (std::size_t a = 0; a < g.size(); ++a)
      for (std::size_t b = a + 1; b < g.size(); ++b)
        if (ActionGrid::distance(g.point(a), g.point(b)) <= res * (1.0 + 1e-9)) out.emplace_back(a, b);
    return out;
  };
  const auto nu = gu.size() > 1 ? neighbours(gu) : decltype(neighbours(gu)){};
  const auto nv = gv.size() > 1 ? neighbours(gv) : decltype(neighbours(gv)){};
  GridHamiltonian gh(s, sample.diffusion(), gu, &gv);
  double lip_u = 0.0, lip_v = 0.0;
  for (std::size_t k = 0; k < sample.grid().steps; ++k) {
    for (std::size_t i = 0; i < sample.particles(); i += stride) {
      gh.prepare(sample.state(i, k), sample.running_sup(i, k), flow.statistics(k), bsde.Z(k, i));
      for (std::size_t l = 0; l < gv.size(); ++l)
        for (const auto& [a, b] : nu)
          lip_u = std::max(lip_u, std::abs(gh(a, l) - gh(b, l)) / ActionGrid::distance(gu.point(a), gu.point(b)));
      for (std::size_t j = 0; j < gu.size(); ++j)
        for (const auto& [a, b] : nv)
          lip_v = std::max(lip_v, std::abs(gh(j, a) - gh(j, b)) / ActionGrid::distance(gv.point(a), gv.point(b)));
    }
  }
  const double ru = gu.size() > 1 ? gu.resolution() : 0.0;
  const double rv = gv.size() > 1 ? gv.resolution() : 0.0;
  return sample.grid().horizon * (lip_u * ru + lip_v * rv) / 2.0;
}

// E^{u,v}[g(x_T, mu_T)] at the fixed point of the pair.
Estimate terminal_expectation(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                              const FixpointOptions& options) {
  const FixpointResult fp = fixpoint_measure_flow(sample, u, v, options);
  if (!fp.diagnostics.converged) throw ConvergenceError("terminal saddle check: fixed point did not converge", fp.diagnostics);
  const std::size_t last = sample.grid().size() - 1;
  return weighted_mean(fp.flow, last, terminal_values(sample, fp.flow));
}

}  // namespace

double game_hamiltonian(const ReferenceSample& sample, std::size_t k, std::size_t i, std::span<const double> m,
                        std::span<const double> z, std::span<const double> u, std::span<const double> v) {
  return sample.hamiltonian(k, i, m, z, u, v);
}

Envelopes envelopes(const ReferenceSample& sample, std::size_t k, std::size_t i, std::span<const double> m,
                    std::span<const double> z, const ActionGrid& grid_u, const ActionGrid& grid_v) {
  GridHamiltonian gh(sample.scenario(), sample.diffusion(), grid_u, &grid_v);
  gh.prepare(sample.state(i, k), sample.running_sup(i, k), m, z);
  return gh.envelopes();
}

IsaacsGap isaacs_gap(const ReferenceSample& sample, const MeasureFlow& flow, const BsdeSolution& z_source,
                     std::size_t stride) {
  const Scenario& s = sample.scenario();
  GridHamiltonian gh(s, sample.diffusion(), s.actions_u, &v_grid(s));
  const std::size_t steps = sample.grid().steps;
  stride = std::max<std::size_t>(stride, 1);
  IsaacsGap out;
  out.profile_max.assign(steps, 0.0);
  out.profile_mean.assign(steps, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < sample.particles(); i += stride) {
      gh.prepare(sample.state(i, k), sample.running_sup(i, k), flow.statistics(k), z_source.Z(k, i));
      const double gap = gh.envelopes().gap();
      out.profile_max[k] = std::max(out.profile_max[k], gap);
      out.profile_mean[k] += gap;
      ++count;
    }
    total += out.profile_mean[k];
    out.points += count;
    out.profile_mean[k] /= static_cast<double>(count);
    out.max_gap = std::max(out.max_gap, out.profile_max[k]);
  }
  out.mean_gap = total / static_cast<double>(out.points);
  return out;
}

BsdeSolution solve_envelope_bsde(const ReferenceSample& sample, const MeasureFlow& flow, Envelope which,
                                 const BasisSpec& basis) {
  const Scenario& s = sample.scenario();
  GridHamiltonian gh(s, sample.diffusion(), s.actions_u, &v_grid(s));
  const LawDriver driver = [&](std::size_t k, std::size_t i, std::span<const double> m, std::span<const double> z,
                               std::span<double> grad) {
    gh.prepare(sample.state(i, k), sample.running_sup(i, k), m, z);
    const Envelopes env = gh.envelopes();
    if (!grad.empty()) {
      if (which == Envelope::lower) gh.theta(env.lower_u, env.lower_v, grad);
      else gh.theta(env.upper_u, env.upper_v, grad);
    }
    return envelope_value(env, which);
  };
  return solve_flow_bsde(sample, driver, flow, basis);
}

std::pair<Control, Control> saddle_feedback(const ReferenceSample& sample,
                                            std::shared_ptr<const std::vector<double>> stats,
                                            std::shared_ptr<const BsdeSolution> bsde) {
  const Scenario& s = sample.scenario();
  auto gu = std::make_shared<const ActionGrid>(s.actions_u);
  auto gv = std::make_shared<const ActionGrid>(v_grid(s));
  auto gh = std::make_shared<GridHamiltonian>(s, sample.diffusion(), *gu, gv.get());
  const std::size_t kstat = s.statistic_count();
  const std::size_t d = sample.dim();
  auto pick = [=](bool for_u) {
    return [=](std::size_t k, std::span<const double> x, double sup, std::span<double> out) {
      std::vector<double> z(d);
      bsde->z_at(k, x, sup, z);
      gh->prepare(x, sup, std::span<const double>(stats->data() + k * kstat, kstat), z);
      const Envelopes env = gh->envelopes();
      const auto p = for_u ? gu->point(env.saddle_u()) : gv->point(env.saddle_v());
      std::copy(p.begin(), p.end(), out.begin());
    };
  };
  return {Control::feedback(*gu, pick(true), "saddle feedback u*"),
          Control::feedback(*gv, pick(false), "saddle feedback v*")};
}

SaddleReport solve_game(const ReferenceSample& sample, const BasisSpec& basis, const GameOptions& options) {
  const Scenario& s = sample.scenario();
  const ActionGrid& gv = v_grid(s);
  const std::size_t last = sample.grid().size() - 1;
  const std::size_t stride = std::max<std::size_t>(options.stride, 1);
  SaddleReport rep;

  MeasureFlow flow = MeasureFlow::reference(sample.shared_paths(), s.statistics);
  auto lower = std::make_shared<const BsdeSolution>(solve_envelope_bsde(sample, flow, Envelope::lower, basis));
  rep.lower_value = lower->y0;
  rep.gap = isaacs_gap(sample, flow, *lower, stride);
  if (rep.gap.max_gap > options.isaacs_tol) {
    rep.upper_value = solve_envelope_bsde(sample, flow, Envelope::upper, basis).y0;
    std::ostringstream msg;
    msg << "Isaacs condition fails: max gap " << rep.gap.max_gap << " (mean " << rep.gap.mean_gap
        << ") exceeds tolerance " << options.isaacs_tol << "; lower value " << rep.lower_value.value << " +- "
        << rep.lower_value.se << ", upper value " << rep.upper_value.value << " +- " << rep.upper_value.se;
    rep.diagnostic = msg.str();
    return rep;
  }
  rep.isaacs_ok = true;
  rep.upper_value = rep.lower_value;

  std::shared_ptr<const BsdeSolution> bsde = lower;
  for (std::size_t it = 0; it < options.max_outer; ++it) {
    if (it > 0) bsde = std::make_shared<const BsdeSolution>(solve_envelope_bsde(sample, flow, Envelope::lower, basis));
    auto stats = std::make_shared<const std::vector<double>>(statistics_table(flow));
    auto [u_star, v_star] = saddle_feedback(sample, stats, bsde);
    ActionPath up = sample_control(sample, u_star);
    ActionPath vp = sample_control(sample, v_star);
    FixpointResult fp = fixpoint_measure_flow(sample, up, vp, options.fixpoint);
    if (!fp.diagnostics.converged) {
      throw ConvergenceError("solve_game: fixed point of the saddle pair did not converge at outer step " +
                                 std::to_string(it),
                             fp.diagnostics);
    }
    const TVEstimate dist = tv_pathspace(fp.flow, flow, last);
    rep.trace.push_back({it, dist.value, dist.se, bsde->y0, fp.diagnostics.iterations});
    rep.iterations = it;
    rep.value = bsde->y0;
    rep.bsde = bsde;
    rep.u_star = u_star;
    rep.v_star = v_star;
    rep.u_path = std::move(up);
    rep.v_path = std::move(vp);
    rep.matching_residual = dist.value;
    rep.matching_se = dist.se;
    rep.fixpoint = std::move(fp);
    if (dist.value < options.outer_tol) {
      rep.converged = true;
      break;
    }
    flow = rep.fixpoint.flow;
  }
  if (!rep.converged) {
    rep.diagnostic = "outer loop did not match the law within " + std::to_string(options.max_outer) + " iterations";
  }

  const MeasureFlow& matched = rep.fixpoint.flow;
  rep.payoff = payoff_at_flow(sample, rep.u_path, rep.v_path, matched);
  rep.final_gap = isaacs_gap(sample, matched, *rep.bsde, stride);
  rep.grid_term = game_grid_term(sample, *rep.bsde, matched, stride);

  if (!s.terminal_depends_on_measure()) {
    rep.terminal_ok = true;
    rep.terminal_note = "g does not depend on the law; the terminal saddle condition holds pointwise";
  } else if (s.actions_u.size() + gv.size() > options.terminal_check_cap) {
    rep.terminal_ok = true;
    rep.terminal_note = "terminal saddle condition not checked: grid sizes exceed the cap of " +
                        std::to_string(options.terminal_check_cap) + " fixed-point solves";
  } else {
    const Estimate center = terminal_expectation(sample, rep.u_path, rep.v_path, options.fixpoint);
    bool ok = true;
    for (std::size_t j = 0; j < s.actions_u.size(); ++j) {
      const auto p = s.actions_u.point(j);
      const ActionPath u = sample_control(sample, Control::constant(s.actions_u, {p.begin(), p.end()}));
      const Estimate e = terminal_expectation(sample, u, rep.v_path, options.fixpoint);
      ok = ok && e.value >= center.value - 3.0 * combined_se(e.se, center.se);
    }
    for (std::size_t l = 0; l < gv.size(); ++l) {
      const auto p = gv.point(l);
      const ActionPath v = sample_control(sample, Control::constant(gv, {p.begin(), p.end()}));
      const Estimate e = terminal_expectation(sample, rep.u_path, v, options.fixpoint);
      ok = ok && e.value <= center.value + 3.0 * combined_se(e.se, center.se);
    }
    rep.terminal_ok = ok;
    rep.terminal_note = ok ? "terminal saddle inequalities hold over the constant grid controls"
                           : "terminal saddle inequalities fail for some constant grid control";
  }
  return rep;
}

SaddleVerification verify_saddle(const ReferenceSample& sample, const SaddleReport& report,
                                 const std::vector<Control>& test_u, const std::vector<Control>& test_v,
                                 const FixpointOptions& options, double se_multiplier) {
  if (!report.isaacs_ok) throw std::invalid_argument("verify_saddle: the game was not solved");
  SaddleVerification out;
  out.center = report.payoff;
  for (const Control& v : test_v) {
    const Estimate j = evaluate_payoff(sample, report.u_path, sample_control(sample, v), options).payoff;
    SlackEntry e{v.name(), j, j.value - out.center.value, combined_se(j.se, out.center.se), false};
    e.ok = e.slack <= se_multiplier * e.se;
    out.all_ok = out.all_ok && e.ok;
    out.v_slacks.push_back(e);
  }
  for (const Control& u : test_u) {
    const Estimate j = evaluate_payoff(sample, sample_control(sample, u), report.v_path, options).payoff;
    SlackEntry e{u.name(), j, j.value - out.center.value, combined_se(j.se, out.center.se), false};
    e.ok = e.slack >= -se_multiplier * e.se;
    out.all_ok = out.all_ok && e.ok;
    out.u_slacks.push_back(e);
  }
  return out;
}

}  // namespace mfc
