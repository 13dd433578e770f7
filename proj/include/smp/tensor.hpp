#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef SMP_REAL
#define SMP_REAL double
#endif

namespace smp {

/// Scalar type of the engine. Wide (double) unless the build overrides SMP_REAL.
using Real = SMP_REAL;

using Shape = std::vector<std::int64_t>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GradError : std::logic_error {
  using std::logic_error::logic_error;
};

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl;

/// Backward record of one primitive application. The producing tensor owns it;
/// it owns its inputs, so the recorded graph stays alive as long as the root.
struct TapeEntry {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Receives d(root)/d(output) and accumulates into each input's grad buffer.
  std::function<void(std::span<const Real> grad_out)> backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until backward reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<TapeEntry> producer;  // null for leaves

  std::vector<Real>& ensure_grad();
};

/// Dense row-major array handle. Copies share storage; tensors outside any
/// recorded graph are treated as immutable values.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value);

  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<const Real> data() const { return impl_->data; }
  /// Mutable access for leaves (parameter updates, test setup).
  std::span<Real> mutable_data();
  Real item() const;
  Real operator[](std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->producer == nullptr; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Real> grad() const;
  void zero_grad() { impl_->grad.clear(); }

  /// Same values, no graph participation.
  Tensor detach() const;
  /// Deep copy of values into a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Builds the output of a primitive. When any input requires grad the output
/// records `backward`, which must accumulate into the inputs' grad buffers.
Tensor make_result(std::string op, Shape shape, std::vector<Real> data,
                   std::vector<Tensor> inputs,
                   std::function<void(std::span<const Real>)> backward);

/// Throws NumericError naming `op` if any value is NaN or infinite.
void check_finite(std::span<const Real> values, const char* op);

/// Reverse sweep from a scalar root. Every requires_grad leaf reachable from the
/// root receives its total derivative. Errors on a non-scalar or detached root,
/// on a graph already swept, and on leaves whose grad was not reset.
void backward(const Tensor& root);

void zero_grad(std::span<Tensor> params);

}  // namespace smp
