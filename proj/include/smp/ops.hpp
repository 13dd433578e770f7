#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "smp/tensor.hpp"

// Differentiable primitives. Binary elementwise ops broadcast by trailing
// alignment only: one operand's shape must equal a suffix of the other's
// (a scalar, shape [], is a suffix of everything).
namespace smp::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& t, Real factor);
Tensor add_scalar(const Tensor& t, Real value);
/// c - t
Tensor rsub_scalar(Real value, const Tensor& t);

Tensor sigmoid(const Tensor& t);
Tensor relu(const Tensor& t);
/// Throws DomainError on any non-positive entry.
Tensor log(const Tensor& t);
Tensor exp(const Tensor& t);
/// t^exponent. Negative bases need an integral exponent; zero bases need a
/// non-negative exponent. Violations throw DomainError.
Tensor power(const Tensor& t, Real exponent);
/// Clamp into [lo, hi]; gradient passes only where lo <= t <= hi.
Tensor clamp(const Tensor& t, Real lo, Real hi);

/// Reductions over `axes` (empty = all axes, giving a scalar of shape []).
Tensor sum(const Tensor& t, std::vector<std::int64_t> axes = {});
Tensor mean(const Tensor& t, std::vector<std::int64_t> axes = {});
/// Gradient flows to one argmax per output; ties go to the lowest linear index.
Tensor max(const Tensor& t, std::vector<std::int64_t> axes = {});

/// Softmax over the whole H x W grid of a rank-2 tensor.
Tensor softmax2d(const Tensor& t);

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::int64_t stride, std::int64_t padding);

Tensor reshape(const Tensor& t, Shape shape);
/// t[index] along the leading axis.
Tensor select(const Tensor& t, std::int64_t index);
/// Picks t.data()[i] for each flat index; result has shape [indices.size()].
Tensor gather(const Tensor& t, std::span<const std::int64_t> flat_indices);

}  // namespace smp::ops
