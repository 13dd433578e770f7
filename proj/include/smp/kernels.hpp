#pragma once

#include <cstdint>
#include <span>

#include "smp/tensor.hpp"

// Convolution kernels over NHWC inputs and [kh,kw,cin,cout] kernels.
//
// Two implementations with identical contracts: `serial` is the plain
// scatter-form reference kept for testing, `parallel` is the OpenMP version
// used by the engine. Every output element is produced by one thread with a
// fixed summation order, so results do not depend on the thread count.
// Backward routines accumulate (+=) into their output buffers.
namespace smp::kernels {

struct ConvGeometry {
  std::int64_t batch = 0, height = 0, width = 0, in_channels = 0;
  std::int64_t kernel_h = 0, kernel_w = 0, out_channels = 0;
  std::int64_t stride = 1, padding = 0;
  std::int64_t out_h = 0, out_w = 0;

  std::int64_t input_size() const { return batch * height * width * in_channels; }
  std::int64_t kernel_size() const { return kernel_h * kernel_w * in_channels * out_channels; }
  std::int64_t output_size() const { return batch * out_h * out_w * out_channels; }
  std::int64_t macs() const { return output_size() * kernel_h * kernel_w * in_channels; }
};

/// Validates extents and fills out_h/out_w. Throws ShapeError on mismatch.
ConvGeometry make_geometry(const Shape& input, const Shape& kernel, std::int64_t stride,
                           std::int64_t padding);

namespace serial {
void conv2d_forward(const ConvGeometry& g, std::span<const Real> input, std::span<const Real> kernel,
                    std::span<Real> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> grad_output,
                           std::span<const Real> kernel, std::span<Real> grad_input);
void conv2d_backward_kernel(const ConvGeometry& g, std::span<const Real> input,
                            std::span<const Real> grad_output, std::span<Real> grad_kernel);
}  // namespace serial

namespace parallel {
void conv2d_forward(const ConvGeometry& g, std::span<const Real> input, std::span<const Real> kernel,
                    std::span<Real> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> grad_output,
                           std::span<const Real> kernel, std::span<Real> grad_input);
void conv2d_backward_kernel(const ConvGeometry& g, std::span<const Real> input,
                            std::span<const Real> grad_output, std::span<Real> grad_kernel);
}  // namespace parallel

enum class Backend { Serial, Parallel };

/// Process-wide backend used by the engine's conv2d. Defaults to Parallel.
void set_backend(Backend backend);
Backend backend();

/// Thread count for the parallel kernels of the calling thread (0 = OpenMP default).
void set_num_threads(int n);
int max_threads();

}  // namespace smp::kernels
