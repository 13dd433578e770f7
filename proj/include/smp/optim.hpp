#pragma once

#include <functional>
#include <span>
#include <vector>

#include "smp/tensor.hpp"

namespace smp {

/// p <- p - lr * grad(p), then grads are cleared. Throws GradError if any
/// parameter has no populated grad.
void sgd_step(std::span<Tensor> params, Real lr);

/// SGD with classical (heavy-ball) momentum: v <- mu*v + g; p <- p - lr*v.
/// With max_grad_norm > 0 the gradient is first rescaled so its global L2 norm
/// is at most max_grad_norm. With mu = 0 and no clipping it is exactly sgd_step.
class MomentumSgd {
 public:
  explicit MomentumSgd(Real momentum, Real max_grad_norm = 0) : momentum_(momentum), max_norm_(max_grad_norm) {}
  void step(std::span<Tensor> params, Real lr);
  Real momentum() const { return momentum_; }
  /// Global gradient norm seen by the last step, before clipping.
  Real last_grad_norm() const { return last_norm_; }
  const std::vector<std::vector<Real>>& velocity() const { return velocity_; }
  void set_velocity(std::vector<std::vector<Real>> v) { velocity_ = std::move(v); }

 private:
  Real momentum_;
  Real max_norm_;
  Real last_norm_ = 0;
  std::vector<std::vector<Real>> velocity_;
};

/// Central-difference check of a scalar function of one tensor. Returns the max
/// elementwise relative error, denominator max(|analytic|, |numeric|, 1e-8).
Real grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real eps);

/// Same check over several parameter leaves that `f` closes over. Parameters are
/// perturbed in place and restored; their grads are left cleared.
Real grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, Real eps);

}  // namespace smp
