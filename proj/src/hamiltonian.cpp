#include "mfc/hamiltonian.hpp"

namespace mfc {

GridHamiltonian::GridHamiltonian(const Scenario& scenario, const DiffusionEvaluator& sigma,
                                 const ActionGrid& u, const ActionGrid* v)
    : scenario_(&scenario), sigma_(&sigma), u_grid_(&u), v_grid_(v) {
  if (u.empty()) throw std::invalid_argument("GridHamiltonian: empty action grid");
  if (v != nullptr && v->empty()) throw std::invalid_argument("GridHamiltonian: empty action grid");
  const std::size_t d = scenario.dim;
  const auto& h = scenario.running_cost;
  const auto& f = scenario.drift;
  nu_ = u.size();
  nv_ = v ? v->size() : 1;
  affine_ = !f.saturation.has_value();

  hu_.assign(nu_, 0.0);
  cu_.assign(nu_ * d, 0.0);
  for (std::size_t j = 0; j < nu_; ++j) {
    const auto p = u.point(j);
    double uu = 0.0, lin = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      uu += p[c] * p[c];
      lin += h.u_linear[c] * p[c];
    }
    hu_[j] = h.u_quadratic * uu + lin;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < f.control_u.cols; ++c) cu_[j * d + r] += f.control_u(r, c) * p[c];
  }
  hv_.assign(nv_, 0.0);
  cv_.assign(nv_ * d, 0.0);
  if (v) {
    for (std::size_t l = 0; l < nv_; ++l) {
      const auto p = v->point(l);
      double vv = 0.0, lin = 0.0;
      for (std::size_t c = 0; c < p.size(); ++c) {
        vv += p[c] * p[c];
        lin += h.v_linear[c] * p[c];
      }
      hv_[l] = h.v_quadratic * vv + lin;
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < f.control_v.cols; ++c) cv_[l * d + r] += f.control_v(r, c) * p[c];
    }
    if (h.uv_cross != 0.0) {
      cross_.assign(nu_ * nv_, 0.0);
      for (std::size_t j = 0; j < nu_; ++j) {
        const auto pu = u.point(j);
        for (std::size_t l = 0; l < nv_; ++l) {
          const auto pv = v->point(l);
          double dot = 0.0;
          for (std::size_t c = 0; c < std::min(pu.size(), pv.size()); ++c) dot += pu[c] * pv[c];
          cross_[j * nv_ + l] = h.uv_cross * dot;
        }
      }
    }
  }
  a_.resize(nu_);
  b_.resize(nv_);
  e_.assign(d, 0.0);
  col_.resize(d);
  y_.resize(d);
  f0_.resize(d);
  u0_.assign(u.dim(), 0.0);
  v0_.assign(v ? v->dim() : 0, 0.0);
}

void GridHamiltonian::prepare(std::span<const double> x, double running_sup, std::span<const double> m,
                              std::span<const double> z) {
  x_.assign(x.begin(), x.end());
  m_.assign(m.begin(), m.end());
  z_.assign(z.begin(), z.end());
  sup_ = running_sup;
  if (!affine_) return;

  const std::size_t d = scenario_->dim;
  // y = sigma^{-T} z, so that z . sigma^{-1} w = y . w
  auto& e = e_;
  auto& col = col_;
  auto& y = y_;
  for (std::size_t c = 0; c < d; ++c) {
    e[c] = 1.0;
    sigma_->apply_inverse(x, running_sup, e, col);
    e[c] = 0.0;
    double acc = 0.0;
    for (std::size_t r = 0; r < d; ++r) acc += z[r] * col[r];
    y[c] = acc;
  }
  scenario_->drift_at(x, m, u0_, v0_, f0_);
  c0_ = scenario_->running_cost_at(x, m, u0_, v0_);
  for (std::size_t r = 0; r < d; ++r) c0_ += y[r] * f0_[r];
  for (std::size_t j = 0; j < nu_; ++j) {
    double acc = hu_[j];
    for (std::size_t r = 0; r < d; ++r) acc += y[r] * cu_[j * d + r];
    a_[j] = acc;
  }
  for (std::size_t l = 0; l < nv_; ++l) {
    double acc = hv_[l];
    for (std::size_t r = 0; r < d; ++r) acc += y[r] * cv_[l * d + r];
    b_[l] = acc;
  }
}

double GridHamiltonian::operator()(std::size_t j, std::size_t l) const {
  if (affine_) {
    double hval = (c0_ + a_[j]) + b_[l];
    if (!cross_.empty()) hval += cross_[j * nv_ + l];
    return hval;
  }
  const std::size_t d = scenario_->dim;
  const auto u = u_grid_->point(j);
  const std::span<const double> v = v_grid_ ? v_grid_->point(l) : std::span<const double>{};
  std::vector<double> f(d), theta(d);
  scenario_->drift_at(x_, m_, u, v, f);
  sigma_->apply_inverse(x_, sup_, f, theta);
  double acc = scenario_->running_cost_at(x_, m_, u, v);
  for (std::size_t r = 0; r < d; ++r) acc += z_[r] * theta[r];
  return acc;
}

void GridHamiltonian::theta(std::size_t j, std::size_t l, std::span<double> out) const {
  const std::size_t d = scenario_->dim;
  const auto u = u_grid_->point(j);
  const std::span<const double> v = v_grid_ ? v_grid_->point(l) : std::span<const double>{};
  std::vector<double> f(d);
  scenario_->drift_at(x_, m_, u, v, f);
  sigma_->apply_inverse(x_, sup_, f, out);
}

GridMinimum GridHamiltonian::minimum() const {
  GridMinimum best{(*this)(0, 0), 0};
  for (std::size_t j = 1; j < nu_; ++j) {
    const double hval = (*this)(j, 0);
    if (hval < best.value) best = {hval, j};
  }
  return best;
}

Envelopes GridHamiltonian::envelopes() const {
  Envelopes env;
  std::vector<double> table(nu_ * nv_);
  for (std::size_t j = 0; j < nu_; ++j)
    for (std::size_t l = 0; l < nv_; ++l) table[j * nv_ + l] = (*this)(j, l);

  for (std::size_t l = 0; l < nv_; ++l) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < nu_; ++j)
      if (table[j * nv_ + l] < table[arg * nv_ + l]) arg = j;
    const double inner = table[arg * nv_ + l];
    if (l == 0 || inner > env.lower) {
      env.lower = inner;
      env.lower_u = arg;
      env.lower_v = l;
    }
  }
  for (std::size_t j = 0; j < nu_; ++j) {
    std::size_t arg = 0;
    for (std::size_t l = 1; l < nv_; ++l)
      if (table[j * nv_ + l] > table[j * nv_ + arg]) arg = l;
    const double inner = table[j * nv_ + arg];
    if (j == 0 || inner < env.upper) {
      env.upper = inner;
      env.upper_u = j;
      env.upper_v = arg;
    }
  }
  return env;
}

}  // namespace mfc
