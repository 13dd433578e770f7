#include "smp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "smp/kernels.hpp"

namespace smp::ops {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

Real* grad_ptr(const ImplPtr& impl) { return impl->requires_grad ? impl->grad.data() : nullptr; }

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                   " are not trailing-broadcast compatible");
}

template <class Fwd, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const auto n = numel(out_shape);
  const auto na = a.size(), nb = b.size();
  auto ad = a.data(), bd = b.data();
  std::vector<Real> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(ad[i % na], bd[i % nb]);
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(name, std::move(out_shape), std::move(out), {a, b},
                     [ai, bi, n, na, nb, da, db](std::span<const Real> g) {
                       const auto& av = ai->data;
                       const auto& bv = bi->data;
                       if (Real* ga = grad_ptr(ai))
                         for (std::int64_t i = 0; i < n; ++i) ga[i % na] += g[i] * da(av[i % na], bv[i % nb]);
                       if (Real* gb = grad_ptr(bi))
                         for (std::int64_t i = 0; i < n; ++i) gb[i % nb] += g[i] * db(av[i % na], bv[i % nb]);
                     });
}

// Local derivative may use the input value x and the output value y.
template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& t, Fwd fwd, Deriv deriv) {
  auto td = t.data();
  std::vector<Real> out(td.size());
  for (std::size_t i = 0; i < td.size(); ++i) out[i] = fwd(td[i]);
  ImplPtr ti = t.impl();
  std::vector<Real> saved = t.requires_grad() ? out : std::vector<Real>{};
  return make_result(name, t.shape(), std::move(out), {t},
                     [ti, saved = std::move(saved), deriv](std::span<const Real> g) {
                       Real* gt = grad_ptr(ti);
                       if (!gt) return;
                       for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i] * deriv(ti->data[i], saved[i]);
                     });
}

struct ReducePlan {
  Shape out_shape;
  std::vector<std::int64_t> out_index;  // per input element
  std::int64_t out_size = 1;
  std::int64_t extent = 1;  // elements folded into each output
};

ReducePlan plan_reduce(const Shape& shape, std::vector<std::int64_t> axes, const char* op) {
  const auto rank = static_cast<std::int64_t>(shape.size());
  std::vector<bool> reduced(shape.size(), axes.empty());
  for (auto ax : axes) {
    if (ax < 0) ax += rank;
    if (ax < 0 || ax >= rank) throw ShapeError(std::string(op) + ": axis out of range for " + to_string(shape));
    reduced[static_cast<std::size_t>(ax)] = true;
  }
  ReducePlan plan;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (reduced[d]) plan.extent *= shape[d];
    else plan.out_shape.push_back(shape[d]);
  }
  if (plan.extent == 0) throw ShapeError(std::string(op) + ": empty reduction extent");
  plan.out_size = numel(plan.out_shape);
  const auto n = numel(shape);
  plan.out_index.resize(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(shape.size(), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t o = 0;
    for (std::size_t d = 0; d < shape.size(); ++d)
      if (!reduced[d]) o = o * shape[d] + idx[d];
    plan.out_index[static_cast<std::size_t>(i)] = o;
    for (auto d = static_cast<std::int64_t>(shape.size()) - 1; d >= 0; --d) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
      [](Real x, Real) { return x; });
}

Tensor scale(const Tensor& t, Real factor) {
  return unary(
      "scale", t, [factor](Real x) { return x * factor; }, [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& t, Real value) {
  return unary(
      "add_scalar", t, [value](Real x) { return x + value; }, [](Real, Real) { return Real(1); });
}

Tensor rsub_scalar(Real value, const Tensor& t) {
  return unary(
      "rsub_scalar", t, [value](Real x) { return value - x; }, [](Real, Real) { return Real(-1); });
}

Tensor sigmoid(const Tensor& t) {
  return unary(
      "sigmoid", t,
      [](Real x) {
        if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
        const Real e = std::exp(x);
        return e / (Real(1) + e);
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor relu(const Tensor& t) {
  return unary(
      "relu", t, [](Real x) { return x > 0 ? x : Real(0); },
      [](Real x, Real) { return x > 0 ? Real(1) : Real(0); });
}

Tensor log(const Tensor& t) {
  for (auto v : t.data()) {
    if (!(v > 0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(
      "log", t, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

Tensor exp(const Tensor& t) {
  return unary(
      "exp", t, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Tensor power(const Tensor& t, Real exponent) {
  const bool integral = std::floor(exponent) == exponent;
  for (auto v : t.data()) {
    if (v < 0 && !integral) throw DomainError("power: negative base with non-integral exponent");
    if (v == 0 && exponent < 0) throw DomainError("power: zero base with negative exponent");
  }
  return unary(
      "power", t, [exponent](Real x) { return std::pow(x, exponent); },
      [exponent](Real x, Real) {
        if (exponent == 0) return Real(0);
        return exponent * std::pow(x, exponent - 1);
      });
}

Tensor clamp(const Tensor& t, Real lo, Real hi) {
  if (lo > hi) throw DomainError("clamp: lo > hi");
  return unary(
      "clamp", t, [lo, hi](Real x) { return std::clamp(x, lo, hi); },
      [lo, hi](Real x, Real) { return (x >= lo && x <= hi) ? Real(1) : Real(0); });
}

Tensor sum(const Tensor& t, std::vector<std::int64_t> axes) {
  auto plan = plan_reduce(t.shape(), std::move(axes), "sum");
  std::vector<Real> out(static_cast<std::size_t>(plan.out_size), Real(0));
  auto td = t.data();
  for (std::size_t i = 0; i < td.size(); ++i) out[plan.out_index[i]] += td[i];
  ImplPtr ti = t.impl();
  auto index = std::move(plan.out_index);
  return make_result("sum", std::move(plan.out_shape), std::move(out), {t},
                     [ti, index = std::move(index)](std::span<const Real> g) {
                       Real* gt = grad_ptr(ti);
                       if (!gt) return;
                       for (std::size_t i = 0; i < index.size(); ++i) gt[i] += g[index[i]];
                     });
}

Tensor mean(const Tensor& t, std::vector<std::int64_t> axes) {
  auto plan = plan_reduce(t.shape(), std::move(axes), "mean");
  std::vector<Real> out(static_cast<std::size_t>(plan.out_size), Real(0));
  auto td = t.data();
  for (std::size_t i = 0; i < td.size(); ++i) out[plan.out_index[i]] += td[i];
  const Real inv = Real(1) / static_cast<Real>(plan.extent);
  for (auto& v : out) v *= inv;
  ImplPtr ti = t.impl();
  auto index = std::move(plan.out_index);
  return make_result("mean", std::move(plan.out_shape), std::move(out), {t},
                     [ti, inv, index = std::move(index)](std::span<const Real> g) {
                       Real* gt = grad_ptr(ti);
                       if (!gt) return;
                       for (std::size_t i = 0; i < index.size(); ++i) gt[i] += g[index[i]] * inv;
                     });
}

Tensor max(const Tensor& t, std::vector<std::int64_t> axes) {
  auto plan = plan_reduce(t.shape(), std::move(axes), "max");
  std::vector<Real> out(static_cast<std::size_t>(plan.out_size), -std::numeric_limits<Real>::infinity());
  std::vector<std::int64_t> arg(static_cast<std::size_t>(plan.out_size), -1);
  auto td = t.data();
  for (std::size_t i = 0; i < td.size(); ++i) {
    const auto o = plan.out_index[i];
    if (arg[o] < 0 || td[i] > out[o]) {  // strict: first occurrence wins ties
      out[o] = td[i];
      arg[o] = static_cast<std::int64_t>(i);
    }
  }
  ImplPtr ti = t.impl();
  return make_result("max", std::move(plan.out_shape), std::move(out), {t},
                     [ti, arg = std::move(arg)](std::span<const Real> g) {
                       Real* gt = grad_ptr(ti);
                       if (!gt) return;
                       for (std::size_t o = 0; o < arg.size(); ++o) gt[arg[o]] += g[o];
                     });
}

Tensor softmax2d(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("softmax2d expects [H,W], got " + to_string(t.shape()));
  auto td = t.data();
  const Real m = *std::max_element(td.begin(), td.end());
  std::vector<Real> out(td.size());
  Real z = 0;
  for (std::size_t i = 0; i < td.size(); ++i) z += (out[i] = std::exp(td[i] - m));
  for (auto& v : out) v /= z;
  ImplPtr ti = t.impl();
  std::vector<Real> saved = t.requires_grad() ? out : std::vector<Real>{};
  return make_result("softmax2d", t.shape(), std::move(out), {t},
                     [ti, p = std::move(saved)](std::span<const Real> g) {
                       Real* gt = grad_ptr(ti);
                       if (!gt) return;
                       Real dot = 0;
                       for (std::size_t i = 0; i < p.size(); ++i) dot += g[i] * p[i];
                       for (std::size_t i = 0; i < p.size(); ++i) gt[i] += p[i] * (g[i] - dot);
                     });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::int64_t stride, std::int64_t padding) {
  const auto geom = kernels::make_geometry(input.shape(), kernel.shape(), stride, padding);
  std::vector<Real> out(static_cast<std::size_t>(geom.output_size()));
  const bool serial = kernels::backend() == kernels::Backend::Serial;
  if (serial) kernels::serial::conv2d_forward(geom, input.data(), kernel.data(), out);
  else kernels::parallel::conv2d_forward(geom, input.data(), kernel.data(), out);
  ImplPtr xi = input.impl(), ki = kernel.impl();
  return make_result("conv2d", Shape{geom.batch, geom.out_h, geom.out_w, geom.out_channels}, std::move(out),
                     {input, kernel}, [xi, ki, geom, serial](std::span<const Real> g) {
                       if (xi->requires_grad) {
                         if (serial) kernels::serial::conv2d_backward_input(geom, g, ki->data, xi->grad);
                         else kernels::parallel::conv2d_backward_input(geom, g, ki->data, xi->grad);
                       }
                       if (ki->requires_grad) {
                         if (serial) kernels::serial::conv2d_backward_kernel(geom, xi->data, g, ki->grad);
                         else kernels::parallel::conv2d_backward_kernel(geom, xi->data, g, ki->grad);
                       }
                     });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (numel(shape) != t.size()) {
    throw ShapeError("reshape from " + to_string(t.shape()) + " to " + to_string(shape));
  }
  ImplPtr ti = t.impl();
  std::vector<Real> out(t.data().begin(), t.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {t}, [ti](std::span<const Real> g) {
    Real* gt = grad_ptr(ti);
    if (!gt) return;
    for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
  });
}

Tensor select(const Tensor& t, std::int64_t index) {
  if (t.rank() < 1) throw ShapeError("select on a scalar");
  const auto lead = t.dim(0);
  if (index < 0 || index >= lead) {
    throw ShapeError("select index " + std::to_string(index) + " out of range for " + to_string(t.shape()));
  }
  Shape shape(t.shape().begin() + 1, t.shape().end());
  const auto block = numel(shape);
  const auto offset = index * block;
  std::vector<Real> out(t.data().begin() + offset, t.data().begin() + offset + block);
  ImplPtr ti = t.impl();
  return make_result("select", std::move(shape), std::move(out), {t},
                     [ti, offset](std::span<const Real> g) {
                       Real* gt = grad_ptr(ti);
                       if (!gt) return;
                       for (std::size_t i = 0; i < g.size(); ++i) gt[offset + static_cast<std::int64_t>(i)] += g[i];
                     });
}

Tensor gather(const Tensor& t, std::span<const std::int64_t> flat_indices) {
  if (flat_indices.empty()) throw ShapeError("gather with no indices");
  std::vector<Real> out(flat_indices.size());
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    const auto idx = flat_indices[i];
    if (idx < 0 || idx >= t.size()) {
      throw ShapeError("gather index " + std::to_string(idx) + " out of range for " + to_string(t.shape()));
    }
    out[i] = t.data()[static_cast<std::size_t>(idx)];
  }
  ImplPtr ti = t.impl();
  std::vector<std::int64_t> idx(flat_indices.begin(), flat_indices.end());
  Shape shape{static_cast<std::int64_t>(idx.size())};
  return make_result("gather", std::move(shape), std::move(out), {t},
                     [ti, idx = std::move(idx)](std::span<const Real> g) {
                       Real* gt = grad_ptr(ti);
                       if (!gt) return;
                       for (std::size_t i = 0; i < idx.size(); ++i) gt[idx[i]] += g[i];
                     });
}

}  // namespace smp::ops
