#include "mfc/bsde.hpp"

#include <cmath>
#include <sstream>

#include "mfc/girsanov.hpp"

namespace mfc {

std::string BasisSpec::describe() const {
  std::ostringstream s;
  s << "polynomial degree " << degree << " in x_t";
  if (use_running_sup) s << " and |x|_t";
  if (bounded_features) s << " + tanh features";
  s << ", ridge " << ridge;
  return s.str();
}

FeatureMap FeatureMap::fit(const PathEnsemble& paths, std::size_t t_index, const BasisSpec& basis) {
  FeatureMap fm;
  fm.basis_ = basis;
  fm.dim_ = paths.dim();
  const std::size_t vars = fm.dim_ + (basis.use_running_sup ? 1 : 0);
  const std::size_t m = paths.particles();
  fm.center_.assign(vars, 0.0);
  fm.scale_.assign(vars, 1.0);
  fm.active_.assign(vars, false);
  auto var = [&](std::size_t i, std::size_t r) {
    return r < fm.dim_ ? paths.state(i, t_index)[r] : paths.running_sup(i, t_index);
  };
  fm.size_ = 1;
  for (std::size_t r = 0; r < vars; ++r) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += var(i, r);
    mean /= static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t i = 0; i < m; ++i) ss += (var(i, r) - mean) * (var(i, r) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(m));
    fm.center_[r] = mean;
    if (sd > 1e-12 * (1.0 + std::abs(mean))) {
      fm.scale_[r] = sd;
      fm.active_[r] = true;
      fm.size_ += basis.degree + (basis.bounded_features ? 1 : 0);
    }
  }
  return fm;
}

void FeatureMap::evaluate(std::span<const double> x, double running_sup, std::span<double> out) const {
  std::size_t c = 0;
  out[c++] = 1.0;
  for (std::size_t r = 0; r < active_.size(); ++r) {
    if (!active_[r]) continue;
    const double raw = r < dim_ ? x[r] : running_sup;
    const double s = (raw - center_[r]) / scale_[r];
    double p = 1.0;
    for (std::size_t q = 0; q < basis_.degree; ++q) {
      p *= s;
      out[c++] = p;
    }
    if (basis_.bounded_features) out[c++] = std::tanh(s);
  }
}

namespace {

// Constant columns (the intercept) are left unpenalized so that shrinkage
// does not bias conditional means.
void add_ridge(Eigen::MatrixXd& gram, const Eigen::MatrixXd& features, double ridge) {
  for (Eigen::Index c = 0; c < features.cols(); ++c) {
    const auto col = features.col(c);
    if (col.maxCoeff() != col.minCoeff()) gram(c, c) += ridge;
  }
}

}  // namespace

RegressionResult regress_conditional(std::span<const double> values, const Eigen::MatrixXd& features,
                                     double ridge) {
  const auto m = features.rows();
  const auto p = features.cols();
  if (static_cast<std::size_t>(m) != values.size()) {
    throw std::invalid_argument("regress_conditional: values and features differ in length");
  }
  if (ridge < 0.0) throw std::invalid_argument("regress_conditional: ridge must be >= 0");
  if (m < p) throw std::invalid_argument("regress_conditional: fewer samples than features");
  Eigen::Map<const Eigen::VectorXd> y(values.data(), m);

  RegressionResult out;
  if (ridge == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(features);
    if (qr.rank() < p) {
      throw NumericalError("regress_conditional: rank-deficient design; use a ridge > 0");
    }
    out.coefficients = qr.solve(y);
  } else {
    const double inv_m = 1.0 / static_cast<double>(m);
    Eigen::MatrixXd gram = features.transpose() * features * inv_m;
    add_ridge(gram, features, ridge);
    const Eigen::VectorXd rhs = features.transpose() * y * inv_m;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success) throw NumericalError("regress_conditional: factorization failed");
    out.coefficients = ldlt.solve(rhs);
  }
  if (!out.coefficients.allFinite()) throw NumericalError("regress_conditional: non-finite coefficients");
  const Eigen::VectorXd fitted = features * out.coefficients;
  out.fitted.assign(fitted.data(), fitted.data() + m);
  out.residual_norm = std::sqrt((y - fitted).squaredNorm() / static_cast<double>(m));
  return out;
}

void BsdeSolution::z_at(std::size_t k, std::span<const double> x, double running_sup,
                        std::span<double> out) const {
  if (control_features) throw std::logic_error("z_at: solution was fitted with control features");
  const std::size_t step = std::min(k, feature_maps.size() - 1);
  const FeatureMap& fm = feature_maps[step];
  double buf[32];
  std::vector<double> heap;
  std::span<double> phi;
  if (fm.size() <= 32) {
    phi = std::span<double>(buf, fm.size());
  } else {
    heap.resize(fm.size());
    phi = heap;
  }
  fm.evaluate(x, running_sup, phi);
  const Eigen::MatrixXd& coef = z_coefficients[step];
  for (std::size_t j = 0; j < dim; ++j) {
    double acc = 0.0;
    for (std::size_t q = 0; q < phi.size(); ++q) acc += phi[q] * coef(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j));
    out[j] = acc;
  }
}

BsdeSolution solve_driver_bsde(const ReferenceSample& sample, const DriverEvaluator& driver,
                               std::span<const double> terminal, const BasisSpec& basis) {
  return solve_driver_bsde(sample, driver, terminal, basis, ExtraFeatures{});
}

BsdeSolution solve_driver_bsde(const ReferenceSample& sample, const DriverEvaluator& driver,
                               std::span<const double> terminal, const BasisSpec& basis,
                               const ExtraFeatures& extra) {
  const std::size_t m = sample.particles();
  const std::size_t d = sample.dim();
  const std::size_t n = sample.grid().size();
  const std::size_t steps = n - 1;
  const double dt = sample.grid().dt;
  const double inv_sqrt_dt = 1.0 / std::sqrt(dt);
  if (terminal.size() != m) throw std::invalid_argument("solve_driver_bsde: terminal has wrong length");

  BsdeSolution sol;
  sol.times = n;
  sol.particles = m;
  sol.dim = d;
  sol.basis = basis;
  sol.y.assign(n * m, 0.0);
  sol.z.assign(steps * m * d, 0.0);
  sol.feature_maps.resize(steps);
  sol.z_coefficients.resize(steps);
  sol.residual_norms.resize(steps);
  sol.control_features = extra.count > 0;
  std::copy(terminal.begin(), terminal.end(), sol.y.begin() + static_cast<std::ptrdiff_t>(steps * m));

  // Pathwise g + sum H dt - sum Z dW; Y_0 is its sample mean.
  std::vector<double> pathwise(terminal.begin(), terminal.end());

  // Kept for the error of Y_0: features, residuals, dH/dz and Gram matrices.
  std::vector<Eigen::MatrixXd> step_phi(steps);
  std::vector<std::vector<double>> step_residual(steps);
  std::vector<std::vector<double>> step_dh(steps);
  std::vector<Eigen::LDLT<Eigen::MatrixXd>> step_gram(steps);

  std::vector<double> phi;
  const std::size_t e = extra.count;
  std::vector<double> extra_values(m * e);
  std::vector<std::size_t> kept;
  for (std::size_t k = steps; k-- > 0;) {
    const FeatureMap fm = FeatureMap::fit(sample.paths(), k, basis);
    const std::size_t base = fm.size();

    // Extra regressors are standardized; constant ones duplicate the intercept.
    kept.clear();
    std::vector<double> center(e, 0.0), scale(e, 1.0);
    if (e > 0) {
      for (std::size_t i = 0; i < m; ++i) extra.evaluate(k, i, std::span<double>(extra_values.data() + i * e, e));
      for (std::size_t r = 0; r < e; ++r) {
        double mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) mean += extra_values[i * e + r];
        mean /= static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t i = 0; i < m; ++i) ss += (extra_values[i * e + r] - mean) * (extra_values[i * e + r] - mean);
        const double sd = std::sqrt(ss / static_cast<double>(m));
        if (sd > 1e-9 * (1.0 + std::abs(mean))) {
          center[r] = mean;
          scale[r] = sd;
          kept.push_back(r);
        }
      }
    }
    const std::size_t p = base + kept.size();
    phi.resize(p);
    Eigen::MatrixXd design(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p * (1 + d)));
    for (std::size_t i = 0; i < m; ++i) {
      fm.evaluate(sample.state(i, k), sample.running_sup(i, k), std::span<double>(phi.data(), base));
      for (std::size_t q = 0; q < kept.size(); ++q) {
        const std::size_t r = kept[q];
        phi[base + q] = (extra_values[i * e + r] - center[r]) / scale[r];
      }
      const auto dw = sample.brownian().increment(i, k);
      const auto row = static_cast<Eigen::Index>(i);
      for (std::size_t q = 0; q < p; ++q) {
        design(row, static_cast<Eigen::Index>(q)) = phi[q];
        for (std::size_t j = 0; j < d; ++j) {
          design(row, static_cast<Eigen::Index>((1 + j) * p + q)) = phi[q] * dw[j] * inv_sqrt_dt;
        }
      }
    }
    // Regressing the pathwise tail rather than the fitted Y_{k+1} keeps the
    // projection error of later steps out of Z_k.
    const std::span<const double> next(pathwise);
    const RegressionResult reg = regress_conditional(next, design, basis.ridge);
    sol.residual_norms[k] = reg.residual_norm;
    {
      Eigen::MatrixXd gram = design.transpose() * design / static_cast<double>(m);
      add_ridge(gram, design, basis.ridge);
      step_gram[k].compute(gram);
      step_phi[k] = design.leftCols(static_cast<Eigen::Index>(p));
      step_residual[k].resize(m);
      for (std::size_t i = 0; i < m; ++i) step_residual[k][i] = pathwise[i] - reg.fitted[i];
      step_dh[k].resize(m * d);
    }

    Eigen::MatrixXd zc(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t q = 0; q < p; ++q)
        zc(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j)) =
            reg.coefficients(static_cast<Eigen::Index>((1 + j) * p + q)) * inv_sqrt_dt;

    for (std::size_t i = 0; i < m; ++i) {
      const auto row = design.row(static_cast<Eigen::Index>(i));
      double cond = 0.0;
      for (std::size_t q = 0; q < p; ++q) cond += row(static_cast<Eigen::Index>(q)) * reg.coefficients(static_cast<Eigen::Index>(q));
      double* zi = sol.z.data() + (k * m + i) * d;
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t q = 0; q < p; ++q) acc += row(static_cast<Eigen::Index>(q)) * zc(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j));
        zi[j] = acc;
      }
      const std::span<const double> zspan(zi, d);
      const double h = driver(k, i, zspan, std::span<double>(step_dh[k].data() + i * d, d));
      if (!std::isfinite(h)) {
        std::ostringstream msg;
        msg << "solve_driver_bsde: non-finite driver at particle " << i << ", step " << k;
        throw NumericalError(msg.str());
      }
      sol.y[k * m + i] = cond + h * dt;
      const auto dw = sample.brownian().increment(i, k);
      double zdw = 0.0;
      for (std::size_t j = 0; j < d; ++j) zdw += zi[j] * dw[j];
      pathwise[i] += h * dt - zdw;
    }
    sol.feature_maps[k] = fm;
    sol.z_coefficients[k] = std::move(zc);
  }

  // The Z coefficients are fitted on the same particles. Each particle's
  // first-order effect on Y_0 through them is added to its pathwise value;
  // lambda_k is the total derivative of Y_0 in the step-k coefficients,
  // including their effect on the regression targets of earlier steps.
  std::vector<double> carried(m, 0.0);
  std::vector<double> terms(pathwise);
  for (std::size_t k = 0; k < steps; ++k) {
    const Eigen::MatrixXd& ph = step_phi[k];
    const auto p = static_cast<std::size_t>(ph.cols());
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p * (1 + d)));
    for (std::size_t i = 0; i < m; ++i) {
      const auto dw = sample.brownian().increment(i, k);
      const double w = 1.0 + carried[i];
      for (std::size_t j = 0; j < d; ++j) {
        const double c = w * (dt * step_dh[k][i * d + j] - dw[j]) * inv_sqrt_dt;
        for (std::size_t q = 0; q < p; ++q)
          lambda(static_cast<Eigen::Index>((1 + j) * p + q)) += c * ph(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q));
      }
    }
    lambda /= static_cast<double>(m);
    const Eigen::VectorXd b = step_gram[k].solve(lambda);
    for (std::size_t i = 0; i < m; ++i) {
      const auto dw = sample.brownian().increment(i, k);
      double t = 0.0;
      for (std::size_t q = 0; q < p; ++q) {
        double coef = b(static_cast<Eigen::Index>(q));
        for (std::size_t j = 0; j < d; ++j) coef += b(static_cast<Eigen::Index>((1 + j) * p + q)) * dw[j] * inv_sqrt_dt;
        t += coef * ph(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q));
      }
      terms[i] += t * step_residual[k][i];
      carried[i] += t;
    }
  }

  double y0 = 0.0;
  for (std::size_t i = 0; i < m; ++i) y0 += sol.y[i];
  sol.y0.value = y0 / static_cast<double>(m);
  sol.y0.se = sample_mean(terms).se;
  sol.y0_terms = std::move(terms);
  return sol;
}

std::vector<double> terminal_values(const ReferenceSample& sample, const MeasureFlow& flow) {
  const std::size_t m = sample.particles();
  const std::size_t last = sample.grid().size() - 1;
  const auto stats = flow.statistics(last);
  std::vector<double> g(m);
  for (std::size_t i = 0; i < m; ++i) g[i] = sample.scenario().terminal_cost_at(sample.state(i, last), stats);
  return g;
}

BsdeSolution solve_flow_bsde(const ReferenceSample& sample, const LawDriver& driver, const MeasureFlow& flow,
                             const BasisSpec& basis, const ExtraFeatures& extra, const LawInfluence& influence) {
  if (flow.shared_paths() != sample.shared_paths()) {
    throw std::invalid_argument("solve_flow_bsde: flow is not built on this sample");
  }
  const std::vector<double> g = terminal_values(sample, flow);
  const DriverEvaluator at_flow = [&](std::size_t k, std::size_t i, std::span<const double> z, std::span<double> grad) {
    return driver(k, i, flow.statistics(k), z, grad);
  };
  BsdeSolution sol = solve_driver_bsde(sample, at_flow, g, basis, extra);

  const Scenario& s = sample.scenario();
  const std::size_t kstat = s.statistic_count();
  const bool running = s.drift_depends_on_measure() || s.costs_depend_on_measure();
  const bool terminal = s.terminal_depends_on_measure();
  if (kstat == 0 || (!running && !terminal)) return sol;

  // Central differences in each statistic; Z is held fixed.
  const std::size_t m = sample.particles();
  const std::size_t n = sample.grid().size();
  const double dt = sample.grid().dt;
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
  if (running) {
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const auto base = flow.statistics(k);
      for (std::size_t j = 0; j < kstat; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          acc += diff(base, j, [&](std::span<const double> mm) { return driver(k, i, mm, sol.Z(k, i), {}); });
        }
        sens[k * kstat + j] = acc * dt / static_cast<double>(m);
      }
    }
  }
  if (terminal) {
    const auto base = flow.statistics(n - 1);
    for (std::size_t j = 0; j < kstat; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        acc += diff(base, j, [&](std::span<const double> mm) { return s.terminal_cost_at(sample.state(i, n - 1), mm); });
      }
      sens[(n - 1) * kstat + j] = acc / static_cast<double>(m);
    }
  }
  const std::vector<double> infl = influence ? influence(sens) : statistic_influence(flow, sens);
  for (std::size_t i = 0; i < m; ++i) sol.y0_terms[i] += infl[i];
  sol.y0.se = sample_mean(sol.y0_terms).se;
  return sol;
}

BsdeSolution solve_linear_bsde(const ReferenceSample& sample, const ActionPath& u, const ActionPath& v,
                               const MeasureFlow& flow, const BasisSpec& basis) {
  // H = h + z . theta is affine in z; h and theta are tabulated once.
  const std::size_t m = sample.particles();
  const std::size_t d = sample.dim();
  const std::size_t steps = sample.grid().steps;
  std::vector<double> h(steps * m), theta(steps * m * d);
  const std::vector<double> zero(d, 0.0);
  for (std::size_t k = 0; k < steps; ++k) {
    const auto stats = flow.statistics(k);
    for (std::size_t i = 0; i < m; ++i) {
      h[k * m + i] = sample.hamiltonian(k, i, stats, zero, u.at(k, i), v.at(k, i));
      sample.theta(k, i, stats, u.at(k, i), v.at(k, i), std::span<double>(theta.data() + (k * m + i) * d, d));
    }
  }
  const LawDriver driver = [&](std::size_t k, std::size_t i, std::span<const double> mm, std::span<const double> z,
                               std::span<double> grad) {
    const double* th = theta.data() + (k * m + i) * d;
    if (!grad.empty()) std::copy(th, th + d, grad.begin());
    if (mm.data() == flow.statistics(k).data()) {
      double acc = h[k * m + i];
      for (std::size_t j = 0; j < d; ++j) acc += z[j] * th[j];
      return acc;
    }
    return sample.hamiltonian(k, i, mm, z, u.at(k, i), v.at(k, i));
  };
  ExtraFeatures extra;
  extra.count = d;
  extra.evaluate = [&](std::size_t k, std::size_t i, std::span<double> out) {
    std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>((k * m + i) * d), d, out.begin());
  };
  const std::vector<double> score = weight_score(sample, u, v, flow);
  const LawInfluence influence = [&](std::span<const double> sens) { return fixpoint_influence(flow, score, sens); };
  return solve_flow_bsde(sample, driver, flow, basis, extra, influence);
}

}  // namespace mfc
