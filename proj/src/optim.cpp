#include "smp/optim.hpp"

#include <algorithm>
#include <cmath>

namespace smp {

void sgd_step(std::span<Tensor> params, Real lr) {
  for (const auto& p : params) {
    if (!p.has_grad()) throw GradError("sgd_step: parameter without populated grad");
  }
  for (auto& p : params) {
    auto data = p.mutable_data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
    p.zero_grad();
  }
}

void MomentumSgd::step(std::span<Tensor> params, Real lr) {
  for (const auto& p : params) {
    if (!p.has_grad()) throw GradError("MomentumSgd: parameter without populated grad");
  }
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(static_cast<std::size_t>(p.size()), Real(0));
  }
  Real sq = 0;
  for (const auto& p : params)
    for (auto g : p.grad()) sq += g * g;
  last_norm_ = std::sqrt(sq);
  const Real factor = (max_norm_ > 0 && last_norm_ > max_norm_) ? max_norm_ / last_norm_ : Real(1);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    auto grad = params[k].grad();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[i] = momentum_ * v[i] + (factor == 1 ? grad[i] : factor * grad[i]);
      data[i] -= lr * v[i];
    }
    params[k].zero_grad();
  }
}

namespace {

Real rel_error(Real a, Real b) {
  const Real denom = std::max({std::abs(a), std::abs(b), Real(1e-8)});
  return std::abs(a - b) / denom;
}

}  // namespace

Real grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real eps) {
  Tensor leaf = x.clone(true);
  backward(f(leaf));
  std::vector<Real> analytic(leaf.grad().begin(), leaf.grad().end());

  Real worst = 0;
  std::vector<Real> probe(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const Real orig = probe[i];
    probe[i] = orig + eps;
    const Real up = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig - eps;
    const Real down = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig;
    worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * eps)));
  }
  return worst;
}

Real grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, Real eps) {
  zero_grad(params);
  backward(f());
  std::vector<std::vector<Real>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
    p.zero_grad();
  }
  Real worst = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Real orig = data[i];
      data[i] = orig + eps;
      const Real up = f().item();
      data[i] = orig - eps;
      const Real down = f().item();
      data[i] = orig;
      worst = std::max(worst, rel_error(analytic[k][i], (up - down) / (2 * eps)));
    }
  }
  return worst;
}

}  // namespace smp
