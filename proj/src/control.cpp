#include "mfc/control.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace mfc {

namespace {

std::string format_vector(std::span<const double> v) {
  std::ostringstream s;
  for (std::size_t j = 0; j < v.size(); ++j) s << (j ? "," : "") << v[j];
  return s.str();
}

}  // namespace

Control::Control(std::string name, std::string kind, ActionGrid set, Rule rule)
    : name_(std::move(name)), kind_(std::move(kind)), set_(std::move(set)), rule_(std::move(rule)) {
  if (set_.empty()) throw std::invalid_argument("Control: empty action set");
}

Control Control::constant(const ActionGrid& set, std::vector<double> action, std::string name) {
  if (action.size() != set.dim()) throw std::invalid_argument("Control::constant: action has wrong dimension");
  set.project(action);
  if (name.empty()) name = "constant(" + format_vector(action) + ")";
  return Control(std::move(name), "constant", set,
                 [action](std::size_t, std::span<const double>, double, std::span<double> out) {
                   std::copy(action.begin(), action.end(), out.begin());
                 });
}

Control Control::parametric(const ActionGrid& set, std::vector<double> a, std::vector<double> b,
                            std::vector<double> c, std::string name) {
  const std::size_t du = set.dim();
  if (a.size() != du || b.size() != du || c.size() != du) {
    throw std::invalid_argument("Control::parametric: coefficients must match the action dimension");
  }
  if (name.empty()) {
    name = "parametric(a=" + format_vector(a) + ";b=" + format_vector(b) + ";c=" + format_vector(c) + ")";
  }
  return Control(std::move(name), "parametric", set,
                 [a, b, c](std::size_t, std::span<const double> x, double sup, std::span<double> out) {
                   for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] + b[j] * x[0] + c[j] * sup;
                 });
}

Control Control::table(const ActionGrid& set, std::vector<double> edges, std::size_t times,
                       std::vector<double> values, std::string name) {
  const std::size_t du = set.dim();
  const std::size_t bins = edges.size() + 1;
  if (times == 0 || values.size() != times * bins * du) {
    throw std::invalid_argument("Control::table: values must hold times x bins x action dimension entries");
  }
  if (!std::is_sorted(edges.begin(), edges.end())) throw std::invalid_argument("Control::table: unsorted edges");
  if (name.empty()) name = "table(" + std::to_string(times) + "x" + std::to_string(bins) + ")";
  return Control(std::move(name), "table", set,
                 [edges, times, bins, du, values](std::size_t k, std::span<const double> x, double,
                                                  std::span<double> out) {
                   const std::size_t row = std::min(k, times - 1);
                   const auto b = static_cast<std::size_t>(
                       std::upper_bound(edges.begin(), edges.end(), x[0]) - edges.begin());
                   const double* p = values.data() + (row * bins + b) * du;
                   std::copy(p, p + du, out.begin());
                 });
}

Control Control::switched(const Control& base, const Control& alt, std::size_t from, std::size_t to,
                          std::string name) {
  if (base.dim() != alt.dim()) throw std::invalid_argument("Control::switched: dimension mismatch");
  if (name.empty()) {
    name = base.name() + " with " + alt.name() + " on steps [" + std::to_string(from) + "," +
           std::to_string(to) + ")";
  }
  return Control(std::move(name), "switched", base.set(),
                 [base, alt, from, to](std::size_t k, std::span<const double> x, double sup,
                                       std::span<double> out) {
                   if (k >= from && k < to) {
                     alt.evaluate(k, x, sup, out);
                   } else {
                     base.evaluate(k, x, sup, out);
                   }
                 });
}

Control Control::feedback(const ActionGrid& set, Rule rule, std::string name) {
  return Control(std::move(name), "feedback", set, std::move(rule));
}

void Control::evaluate(std::size_t k, std::span<const double> x, double running_sup,
                       std::span<double> out) const {
  rule_(k, x, running_sup, out);
  set_.project(out);
}

ActionPath sample_control(const ReferenceSample& sample, const Control& control) {
  const std::size_t n = sample.grid().size();
  const std::size_t m = sample.particles();
  ActionPath path(control.dim(), n, m);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < m; ++i) control.evaluate(k, sample.state(i, k), sample.running_sup(i, k), path.at(k, i));
  return path;
}

double hamiltonian(const ReferenceSample& sample, std::size_t k, std::size_t i, std::span<const double> m,
                   std::span<const double> z, std::span<const double> u) {
  return sample.hamiltonian(k, i, m, z, u, {});
}

HamiltonianMinimum minimized_hamiltonian(const ReferenceSample& sample, std::size_t k, std::size_t i,
                                         std::span<const double> m, std::span<const double> z,
                                         const ActionGrid& grid) {
  if (grid.empty()) throw std::invalid_argument("minimized_hamiltonian: empty action grid");
  HamiltonianMinimum best;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double hval = sample.hamiltonian(k, i, m, z, grid.point(j), {});
    if (j == 0 || hval < best.value) {
      best.value = hval;
      best.index = j;
    }
  }
  const auto p = grid.point(best.index);
  best.action.assign(p.begin(), p.end());
  return best;
}

std::vector<double> payoff_terms(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                                 const MeasureFlow& flow) {
  const Scenario& s = sample.scenario();
  const std::size_t n = sample.grid().size();
  const std::size_t m = sample.particles();
  const std::size_t kstat = s.statistic_count();
  const double dt = sample.grid().dt;
  const bool running = s.costs_depend_on_measure();
  const bool terminal = s.terminal_depends_on_measure();
  std::vector<double> per_particle(m, 0.0);
  std::vector<double> sens(n * kstat, 0.0);
  std::vector<double> shifted(kstat);
  auto diff = [&](std::span<const double> base, std::size_t j, const auto& eval) {
    const double eta = 1e-5 * (1.0 + std::abs(base[j]));
    std::copy(base.begin(), base.end(), shifted.begin());
    shifted[j] = base[j] + eta;
    const double up = eval(std::span<const double>(shifted));
    shifted[j] = base[j] - eta;
    const double down = eval(std::span<const double>(shifted));
    return (up - down) / (2.0 * eta);
  };
  for (std::size_t k = 0; k < n; ++k) {
    const auto stats = flow.statistics(k);
    const double c = (k == 0 || k + 1 == n) ? 0.5 * dt : dt;
    for (std::size_t i = 0; i < m; ++i) {
      const auto x = sample.state(i, k);
      const double w = c * flow.weight(k, i);
      per_particle[i] += w * s.running_cost_at(x, stats, u.at(k, i), v.at(k, i));
      if (!running) continue;
      for (std::size_t j = 0; j < kstat; ++j) {
        sens[k * kstat + j] +=
            w * diff(stats, j, [&](std::span<const double> mm) { return s.running_cost_at(x, mm, u.at(k, i), v.at(k, i)); });
      }
    }
  }
  const auto last = flow.statistics(n - 1);
  for (std::size_t i = 0; i < m; ++i) {
    const auto x = sample.state(i, n - 1);
    const double w = flow.weight(n - 1, i);
    per_particle[i] += w * s.terminal_cost_at(x, last);
    if (!terminal) continue;
    for (std::size_t j = 0; j < kstat; ++j) {
      sens[(n - 1) * kstat + j] += w * diff(last, j, [&](std::span<const double> mm) { return s.terminal_cost_at(x, mm); });
    }
  }
  const std::vector<double> score = weight_score(sample, u, v, flow);
  if (!score.empty()) {
    // L_{k'} for k' > k depends on m_k; ahead[i] is the weighted cost after k.
    std::vector<double> ahead(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) ahead[i] = flow.weight(n - 1, i) * s.terminal_cost_at(sample.state(i, n - 1), last);
    for (std::size_t k = n - 1; k-- > 0;) {
      const auto next = flow.statistics(k + 1);
      const double c = (k + 2 == n) ? 0.5 * dt : dt;
      for (std::size_t i = 0; i < m; ++i)
        ahead[i] += c * flow.weight(k + 1, i) * s.running_cost_at(sample.state(i, k + 1), next, u.at(k + 1, i), v.at(k + 1, i));
      for (std::size_t j = 0; j < kstat; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += score[(k * m + i) * kstat + j] * ahead[i];
        sens[k * kstat + j] += acc;
      }
    }
  }
  if (running || terminal || !score.empty()) {
    for (double& c : sens) c /= static_cast<double>(m);
    const std::vector<double> infl = fixpoint_influence(flow, score, sens);
    for (std::size_t i = 0; i < m; ++i) per_particle[i] += infl[i];
  }
  return per_particle;
}

Estimate payoff_at_flow(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                        const MeasureFlow& flow) {
  return sample_mean(payoff_terms(sample, u, v, flow));
}

PayoffResult evaluate_payoff(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                             const FixpointOptions& options) {
  PayoffResult out;
  out.fixpoint = fixpoint_measure_flow(sample, u, v, options);
  if (!out.fixpoint.diagnostics.converged) {
    std::ostringstream msg;
    msg << "evaluate_payoff: fixed point did not converge in " << options.max_iter << " iterations (last distance "
        << out.fixpoint.diagnostics.distances.back() << ")";
    throw ConvergenceError(msg.str(), out.fixpoint.diagnostics);
  }
  out.terms = payoff_terms(sample, u, v, out.fixpoint.flow);
  out.payoff = sample_mean(out.terms);
  out.u = u;
  out.v = v;
  return out;
}

PayoffResult evaluate_payoff(const ReferenceSample& sample, const Control& u, const FixpointOptions& options) {
  return evaluate_payoff(sample, sample_control(sample, u), sample.empty_actions(), options);
}

PayoffResult evaluate_payoff(const ReferenceSample& sample, const Control& u, const Control& v,
                             const FixpointOptions& options) {
  return evaluate_payoff(sample, sample_control(sample, u), sample_control(sample, v), options);
}

Control argmin_feedback(const ReferenceSample& sample, const ActionGrid& grid,
                        std::shared_ptr<const std::vector<double>> stats,
                        std::shared_ptr<const BsdeSolution> bsde, std::string name) {
  auto grid_copy = std::make_shared<const ActionGrid>(grid);
  auto gh = std::make_shared<GridHamiltonian>(sample.scenario(), sample.diffusion(), *grid_copy);
  const std::size_t kstat = sample.scenario().statistic_count();
  const std::size_t d = sample.dim();
  return Control::feedback(
      grid,
      [grid_copy, gh, stats, bsde, kstat, d](std::size_t k, std::span<const double> x, double sup,
                                             std::span<double> out) {
        double zbuf[8];
        std::vector<double> zheap;
        std::span<double> z;
        if (d <= 8) {
          z = std::span<double>(zbuf, d);
        } else {
          zheap.resize(d);
          z = zheap;
        }
        bsde->z_at(k, x, sup, z);
        const std::span<const double> m(stats->data() + k * kstat, kstat);
        gh->prepare(x, sup, m, z);
        const auto p = grid_copy->point(gh->minimum().index);
        std::copy(p.begin(), p.end(), out.begin());
      },
      std::move(name));
}

BsdeSolution solve_min_bsde(const ReferenceSample& sample, const ActionGrid& grid, const MeasureFlow& flow,
                            const BasisSpec& basis) {
  GridHamiltonian gh(sample.scenario(), sample.diffusion(), grid);
  const LawDriver driver = [&](std::size_t k, std::size_t i, std::span<const double> m, std::span<const double> z,
                               std::span<double> grad) {
    gh.prepare(sample.state(i, k), sample.running_sup(i, k), m, z);
    const GridMinimum best = gh.minimum();
    if (!grad.empty()) gh.theta(best.index, 0, grad);
    return best.value;
  };
  return solve_flow_bsde(sample, driver, flow, basis);
}

double grid_resolution_term(const ReferenceSample& sample, const ActionGrid& grid, const BsdeSolution& bsde,
                            const MeasureFlow& flow, std::size_t stride) {
  if (grid.size() < 2) return 0.0;
  const double res = grid.resolution();
  std::vector<std::pair<std::size_t, std::size_t>> neighbours;
  for (std::size_t a = 0; a < grid.size(); ++a)
    for (std::size_t b = a + 1; b < grid.size(); ++b)
      if (ActionGrid::distance(grid.point(a), grid.point(b)) <= res * (1.0 + 1e-9)) neighbours.emplace_back(a, b);

  GridHamiltonian gh(sample.scenario(), sample.diffusion(), grid);
  double lip = 0.0;
  const std::size_t steps = sample.grid().steps;
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t i = 0; i < sample.particles(); i += std::max<std::size_t>(stride, 1)) {
      gh.prepare(sample.state(i, k), sample.running_sup(i, k), flow.statistics(k), bsde.Z(k, i));
      for (const auto& [a, b] : neighbours) {
        const double q = std::abs(gh(a) - gh(b)) / ActionGrid::distance(grid.point(a), grid.point(b));
        lip = std::max(lip, q);
      }
    }
  }
  return sample.grid().horizon * lip * res / 2.0;
}

OptimizationReport policy_iteration(const ReferenceSample& sample, const ActionGrid& grid,
                                    const BasisSpec& basis, const PolicyOptions& options) {
  const std::size_t last = sample.grid().size() - 1;
  OptimizationReport rep;
  MeasureFlow flow = MeasureFlow::reference(sample.shared_paths(), sample.scenario().statistics);
  for (std::size_t it = 0; it < options.max_outer; ++it) {
    auto bsde = std::make_shared<const BsdeSolution>(solve_min_bsde(sample, grid, flow, basis));
    auto stats = std::make_shared<const std::vector<double>>(statistics_table(flow));
    Control feedback = argmin_feedback(sample, grid, stats, bsde);
    ActionPath path = sample_control(sample, feedback);
    FixpointResult fp = fixpoint_measure_flow(sample, path, sample.empty_actions(), options.fixpoint);
    if (!fp.diagnostics.converged) {
      throw ConvergenceError("policy_iteration: fixed point of the argmin feedback did not converge at outer step " +
                                 std::to_string(it),
                             fp.diagnostics);
    }
    const TVEstimate dist = tv_pathspace(fp.flow, flow, last);
    rep.trace.push_back({it, dist.value, dist.se, bsde->y0, fp.diagnostics.iterations});
    rep.iterations = it;
    rep.value = bsde->y0;
    rep.bsde = bsde;
    rep.best = feedback;
    rep.best_path = std::move(path);
    rep.matching_residual = dist.value;
    rep.matching_se = dist.se;
    rep.fixpoint = std::move(fp);
    if (dist.value < options.outer_tol) {
      rep.converged = true;
      break;
    }
    flow = rep.fixpoint.flow;
  }

  const MeasureFlow& matched = rep.fixpoint.flow;
  rep.payoff = payoff_at_flow(sample, rep.best_path, sample.empty_actions(), matched);
  rep.epsilon = {rep.payoff.value - rep.value.value, combined_se(rep.payoff.se, rep.value.se)};
  rep.inconsistent = rep.epsilon.value < -3.0 * rep.epsilon.se;

  GridHamiltonian gh(sample.scenario(), sample.diffusion(), grid);
  const std::size_t stride = std::max<std::size_t>(options.residual_stride, 1);
  double residual = 0.0;
  for (std::size_t k = 0; k < last; ++k) {
    for (std::size_t i = 0; i < sample.particles(); i += stride) {
      const auto z = rep.bsde->Z(k, i);
      gh.prepare(sample.state(i, k), sample.running_sup(i, k), matched.statistics(k), z);
      const double h_star = gh.minimum().value;
      const double h_hat = sample.hamiltonian(k, i, matched.statistics(k), z, rep.best_path.at(k, i), {});
      residual = std::max(residual, h_hat - h_star);
    }
  }
  rep.hamiltonian_residual = residual;
  rep.grid_term = grid_resolution_term(sample, grid, *rep.bsde, matched, stride);
  return rep;
}

NearOptimalReport near_optimal_search(const ReferenceSample& sample, const std::vector<Control>& family,
                                      const Estimate& value, double epsilon_target,
                                      const FixpointOptions& options) {
  if (family.empty()) throw std::invalid_argument("near_optimal_search: empty control family");
  NearOptimalReport rep;
  rep.value = value;
  rep.target = epsilon_target;
  bool have_best = false;
  for (std::size_t j = 0; j < family.size(); ++j) {
    FamilyRow row{family[j].name(), {}, true};
    try {
      row.payoff = evaluate_payoff(sample, family[j], options).payoff;
    } catch (const ConvergenceError&) {
      row.converged = false;
    }
    if (row.converged && (!have_best || row.payoff.value < rep.rows[rep.best].payoff.value)) {
      rep.best = j;
      have_best = true;
    }
    rep.rows.push_back(row);
  }
  if (!have_best) throw std::runtime_error("near_optimal_search: no control in the family converged");
  const Estimate& best = rep.rows[rep.best].payoff;
  rep.epsilon = {best.value - value.value, combined_se(best.se, value.se)};
  rep.success = rep.epsilon.value <= epsilon_target + 3.0 * rep.epsilon.se;
  return rep;
}

double ekeland_distance(const ReferenceSample& sample, const ActionPath& a, const ActionPath& b) {
  if (a.dim != b.dim || a.particles != b.particles || a.times != b.times) {
    throw std::invalid_argument("ekeland_distance: action paths differ in shape");
  }
  const std::size_t steps = sample.grid().steps;
  std::size_t count = 0;
  for (std::size_t k = 0; k < steps; ++k)
    for (std::size_t i = 0; i < a.particles; ++i)
      if (ActionGrid::distance(a.at(k, i), b.at(k, i)) > 0.0) ++count;
  return sample.grid().dt * static_cast<double>(count) / static_cast<double>(a.particles);
}

double ekeland_distance(const ReferenceSample& sample, const Control& a, const Control& b) {
  return ekeland_distance(sample, sample_control(sample, a), sample_control(sample, b));
}

IdentityCheck payoff_identity(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                              const BasisSpec& basis, const FixpointOptions& options, double se_multiplier) {
  IdentityCheck out;
  out.result = evaluate_payoff(sample, u, v, options);
  const BsdeSolution bsde = solve_linear_bsde(sample, u, v, out.result.fixpoint.flow, basis);
  out.y0 = bsde.y0;
  out.gap = std::abs(out.y0.value - out.result.payoff.value);
  std::vector<double> diff(bsde.y0_terms);
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= out.result.terms[i];
  out.se = sample_mean(diff).se;
  out.ok = out.gap <= se_multiplier * out.se;
  return out;
}

ComparisonReport verify_comparison(const ReferenceSample& sample, const Estimate& value,
                                   const std::vector<Control>& controls, const BasisSpec& basis,
                                   const FixpointOptions& options, double se_multiplier, double grid_term) {
  ComparisonReport rep;
  rep.value = value;
  for (const Control& c : controls) {
    const IdentityCheck id = payoff_identity(sample, sample_control(sample, c), sample.empty_actions(), basis,
                                             options, se_multiplier);
    ComparisonRow row;
    row.name = c.name();
    row.y0 = id.y0;
    row.payoff = id.result.payoff;
    row.identity_gap = id.gap;
    row.identity_se = id.se;
    row.identity_ok = id.ok;
    row.slack = id.y0.value - value.value;
    row.slack_se = combined_se(id.y0.se, value.se);
    row.slack_ok = row.slack >= -se_multiplier * row.slack_se - grid_term;
    rep.all_ok = rep.all_ok && row.identity_ok && row.slack_ok;
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace mfc

namespace mfc {

std::vector<Control> standard_test_controls(const ActionGrid& set, std::size_t steps, int variant) {
  const std::size_t du = set.dim();
  auto at = [&](double frac) {
    std::vector<double> a(du);
    for (std::size_t j = 0; j < du; ++j) a[j] = set.lower()[j] + frac * (set.upper()[j] - set.lower()[j]);
    return a;
  };
  auto scaled = [&](double frac) {
    std::vector<double> a(du);
    for (std::size_t j = 0; j < du; ++j) a[j] = frac * (set.upper()[j] - set.lower()[j]);
    return a;
  };
  const bool mirror = variant != 0;
  const double lo = mirror ? 1.0 : 0.0;
  const double hi = mirror ? 0.0 : 1.0;
  std::vector<Control> out;
  out.push_back(Control::constant(set, at(lo)));
  out.push_back(Control::constant(set, at(hi)));
  out.push_back(Control::constant(set, at(mirror ? 0.75 : 0.25)));
  out.push_back(Control::parametric(set, at(mirror ? 0.4 : 0.6), scaled(mirror ? 0.2 : -0.25),
                                    scaled(mirror ? -0.05 : 0.05)));
  out.push_back(Control::switched(Control::constant(set, at(lo)), Control::constant(set, at(hi)), steps / 2, steps));
  return out;
}

std::vector<Control> random_feedback_controls(const ActionGrid& set, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t du = set.dim();
  std::vector<Control> out;
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<double> a(du), b(du), c(du);
    for (std::size_t j = 0; j < du; ++j) {
      a[j] = set.lower()[j] + unit(rng) * (set.upper()[j] - set.lower()[j]);
      b[j] = -1.0 + 2.0 * unit(rng);
      c[j] = -0.5 + unit(rng);
    }
    out.push_back(Control::parametric(set, a, b, c, "random feedback " + std::to_string(n)));
  }
  return out;
}

}  // namespace mfc
