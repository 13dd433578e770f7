#include "smp/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace smp {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<Real>& TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), Real(0));
  return grad;
}

void check_finite(std::span<const Real> values, const char* op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << op << ": non-finite value " << values[i] << " at index " << i;
      throw NumericError(os.str());
    }
  }
}

Tensor::Tensor() : Tensor(Shape{}, std::vector<Real>{Real(0)}) {}

Tensor::Tensor(Shape shape, std::vector<Real> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  }
  check_finite(data, "tensor");
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), value), requires_grad);
}

Tensor Tensor::scalar(Real value) { return Tensor(Shape{}, {value}); }

std::int64_t Tensor::dim(std::int64_t axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for shape " + to_string(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

std::span<Real> Tensor::mutable_data() {
  if (!is_leaf()) throw GradError("mutable_data on a non-leaf tensor");
  return impl_->data;
}

Real Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

std::span<const Real> Tensor::grad() const {
  if (impl_->grad.empty()) throw GradError("tensor has no populated grad");
  return impl_->grad;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone(bool requires_grad) const {
  Tensor t = detach();
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor make_result(std::string op, Shape shape, std::vector<Real> data, std::vector<Tensor> inputs,
                   std::function<void(std::span<const Real>)> backward) {
  check_finite(data, op.c_str());
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    auto entry = std::make_shared<TapeEntry>();
    entry->op = std::move(op);
    entry->inputs.reserve(inputs.size());
    for (const auto& t : inputs) entry->inputs.push_back(t.impl());
    entry->backward = std::move(backward);
    impl->requires_grad = true;
    impl->producer = std::move(entry);
  }
  return Tensor(std::move(impl));
}

void backward(const Tensor& root) {
  if (root.size() != 1) throw GradError("backward root must be a scalar, got shape " + to_string(root.shape()));
  if (!root.requires_grad()) throw GradError("backward root is detached from any recorded graph");
  const auto& root_impl = root.impl();
  if (root_impl->producer && root_impl->producer->consumed) {
    throw GradError("backward already ran on this graph");
  }

  // Topological order via iterative DFS; inputs precede their consumers.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root_impl.get(), 0}};
  seen.insert(root_impl.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* entry = node->producer.get();
    if (entry && next < entry->inputs.size()) {
      TensorImpl* child = entry->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->producer && !node->grad.empty()) {
      throw GradError("leaf grad already populated; reset it before calling backward again");
    }
  }
  for (auto* node : order) {
    if (node->producer) node->grad.clear();
  }

  root_impl->ensure_grad()[0] = Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->producer) continue;
    auto& g = node->ensure_grad();
    for (auto& input : node->producer->inputs) {
      if (input->requires_grad) input->ensure_grad();
    }
    node->producer->backward(g);
    node->producer->consumed = true;
    if (node != root_impl.get()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
  for (auto* node : order) {
    if (!node->producer) check_finite(node->grad, "backward");
  }
}

void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace smp
