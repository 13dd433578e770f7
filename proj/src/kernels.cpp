#include "smp/kernels.hpp"

#include <atomic>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace smp::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::Parallel};
}

void set_backend(Backend backend) { g_backend.store(backend); }
Backend backend() { return g_backend.load(); }

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n > 0 ? n : omp_get_num_procs());
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

ConvGeometry make_geometry(const Shape& input, const Shape& kernel, std::int64_t stride,
                           std::int64_t padding) {
  if (input.size() != 4) throw ShapeError("conv2d input must be [N,H,W,Cin], got " + to_string(input));
  if (kernel.size() != 4) throw ShapeError("conv2d kernel must be [kh,kw,Cin,Cout], got " + to_string(kernel));
  if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d padding must be >= 0");
  if (input[3] != kernel[2]) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(input[3]) +
                     " channels, kernel expects " + std::to_string(kernel[2]));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.height = input[1];
  g.width = input[2];
  g.in_channels = input[3];
  g.kernel_h = kernel[0];
  g.kernel_w = kernel[1];
  g.out_channels = kernel[3];
  g.stride = stride;
  g.padding = padding;
  if (g.kernel_h > g.height + 2 * padding || g.kernel_w > g.width + 2 * padding) {
    throw ShapeError("conv2d kernel " + to_string(kernel) + " exceeds padded input " + to_string(input));
  }
  g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;
  return g;
}

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const Real> input, std::span<const Real> kernel,
                    std::span<Real> output) {
  const auto cin = g.in_channels, cout = g.out_channels;
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t oh = 0; oh < g.out_h; ++oh)
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        Real* out = &output[static_cast<std::size_t>(((n * g.out_h + oh) * g.out_w + ow) * cout)];
        for (std::int64_t co = 0; co < cout; ++co) out[co] = 0;
        for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
          const auto ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.height) continue;
          for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
            const auto iw = ow * g.stride - g.padding + kw;
            if (iw < 0 || iw >= g.width) continue;
            const Real* x = &input[static_cast<std::size_t>(((n * g.height + ih) * g.width + iw) * cin)];
            const Real* k = &kernel[static_cast<std::size_t>((kh * g.kernel_w + kw) * cin * cout)];
            for (std::int64_t ci = 0; ci < cin; ++ci)
              for (std::int64_t co = 0; co < cout; ++co) out[co] += x[ci] * k[ci * cout + co];
          }
        }
      }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> grad_output,
                           std::span<const Real> kernel, std::span<Real> grad_input) {
  const auto cin = g.in_channels, cout = g.out_channels;
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t oh = 0; oh < g.out_h; ++oh)
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        const Real* go = &grad_output[static_cast<std::size_t>(((n * g.out_h + oh) * g.out_w + ow) * cout)];
        for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
          const auto ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.height) continue;
          for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
            const auto iw = ow * g.stride - g.padding + kw;
            if (iw < 0 || iw >= g.width) continue;
            Real* gi = &grad_input[static_cast<std::size_t>(((n * g.height + ih) * g.width + iw) * cin)];
            const Real* k = &kernel[static_cast<std::size_t>((kh * g.kernel_w + kw) * cin * cout)];
            for (std::int64_t ci = 0; ci < cin; ++ci) {
              Real acc = 0;
              for (std::int64_t co = 0; co < cout; ++co) acc += go[co] * k[ci * cout + co];
              gi[ci] += acc;
            }
          }
        }
      }
}

void conv2d_backward_kernel(const ConvGeometry& g, std::span<const Real> input,
                            std::span<const Real> grad_output, std::span<Real> grad_kernel) {
  const auto cin = g.in_channels, cout = g.out_channels;
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t oh = 0; oh < g.out_h; ++oh)
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        const Real* go = &grad_output[static_cast<std::size_t>(((n * g.out_h + oh) * g.out_w + ow) * cout)];
        for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
          const auto ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.height) continue;
          for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
            const auto iw = ow * g.stride - g.padding + kw;
            if (iw < 0 || iw >= g.width) continue;
            const Real* x = &input[static_cast<std::size_t>(((n * g.height + ih) * g.width + iw) * cin)];
            Real* gk = &grad_kernel[static_cast<std::size_t>((kh * g.kernel_w + kw) * cin * cout)];
            for (std::int64_t ci = 0; ci < cin; ++ci)
              for (std::int64_t co = 0; co < cout; ++co) gk[ci * cout + co] += x[ci] * go[co];
          }
        }
      }
}

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvGeometry& g, std::span<const Real> input, std::span<const Real> kernel,
                    std::span<Real> output) {
  const auto cin = g.in_channels, cout = g.out_channels;
  const Real* __restrict in_p = input.data();
  const Real* __restrict k_p = kernel.data();
  Real* __restrict out_p = output.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t oh = 0; oh < g.out_h; ++oh)
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        Real* __restrict out = out_p + ((n * g.out_h + oh) * g.out_w + ow) * cout;
        for (std::int64_t co = 0; co < cout; ++co) out[co] = 0;
        for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
          const auto ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.height) continue;
          for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
            const auto iw = ow * g.stride - g.padding + kw;
            if (iw < 0 || iw >= g.width) continue;
            const Real* __restrict x = in_p + ((n * g.height + ih) * g.width + iw) * cin;
            const Real* __restrict k = k_p + (kh * g.kernel_w + kw) * cin * cout;
            for (std::int64_t ci = 0; ci < cin; ++ci) {
              const Real xv = x[ci];
              const Real* __restrict kr = k + ci * cout;
              for (std::int64_t co = 0; co < cout; ++co) out[co] += xv * kr[co];
            }
          }
        }
      }
}

// Gather form: each input cell collects from the output cells it fed, so rows
// can be split across threads without write conflicts.
void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> grad_output,
                           std::span<const Real> kernel, std::span<Real> grad_input) {
  const auto cin = g.in_channels, cout = g.out_channels;
  // [kh,kw,cout,cin] so the innermost loop runs over contiguous input channels.
  std::vector<Real> transposed(static_cast<std::size_t>(g.kernel_size()));
  for (std::int64_t t = 0; t < g.kernel_h * g.kernel_w; ++t)
    for (std::int64_t ci = 0; ci < cin; ++ci)
      for (std::int64_t co = 0; co < cout; ++co)
        transposed[static_cast<std::size_t>((t * cout + co) * cin + ci)] =
            kernel[static_cast<std::size_t>((t * cin + ci) * cout + co)];
  const Real* __restrict go_p = grad_output.data();
  const Real* __restrict kt_p = transposed.data();
  Real* __restrict gi_p = grad_input.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t ih = 0; ih < g.height; ++ih)
      for (std::int64_t iw = 0; iw < g.width; ++iw) {
        Real* __restrict gi = gi_p + ((n * g.height + ih) * g.width + iw) * cin;
        for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
          const auto th = ih + g.padding - kh;
          if (th < 0 || th % g.stride != 0) continue;
          const auto oh = th / g.stride;
          if (oh >= g.out_h) continue;
          for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
            const auto tw = iw + g.padding - kw;
            if (tw < 0 || tw % g.stride != 0) continue;
            const auto ow = tw / g.stride;
            if (ow >= g.out_w) continue;
            const Real* __restrict go = go_p + ((n * g.out_h + oh) * g.out_w + ow) * cout;
            const Real* __restrict kt = kt_p + (kh * g.kernel_w + kw) * cout * cin;
            for (std::int64_t co = 0; co < cout; ++co) {
              const Real gv = go[co];
              const Real* __restrict kr = kt + co * cin;
              for (std::int64_t ci = 0; ci < cin; ++ci) gi[ci] += gv * kr[ci];
            }
          }
        }
      }
}

void conv2d_backward_kernel(const ConvGeometry& g, std::span<const Real> input,
                            std::span<const Real> grad_output, std::span<Real> grad_kernel) {
  const auto cin = g.in_channels, cout = g.out_channels;
  const Real* __restrict in_p = input.data();
  const Real* __restrict go_p = grad_output.data();
  Real* __restrict gk_p = grad_kernel.data();
  const std::int64_t taps = g.kernel_h * g.kernel_w;
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < taps; ++t) {
    const auto kh = t / g.kernel_w, kw = t % g.kernel_w;
    Real* __restrict gk = gk_p + t * cin * cout;
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        const auto ih = oh * g.stride - g.padding + kh;
        if (ih < 0 || ih >= g.height) continue;
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
          const auto iw = ow * g.stride - g.padding + kw;
          if (iw < 0 || iw >= g.width) continue;
          const Real* __restrict x = in_p + ((n * g.height + ih) * g.width + iw) * cin;
          const Real* __restrict go = go_p + ((n * g.out_h + oh) * g.out_w + ow) * cout;
          for (std::int64_t ci = 0; ci < cin; ++ci) {
            const Real xv = x[ci];
            Real* __restrict row = gk + ci * cout;
            for (std::int64_t co = 0; co < cout; ++co) row[co] += xv * go[co];
          }
        }
      }
  }
}

}  // namespace parallel

}  // namespace smp::kernels
