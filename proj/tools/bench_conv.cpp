// Times the serial and OpenMP conv2d kernels on the model's layer shapes and
// reports how far the two disagree (summation order differs in the backward pass).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "smp/kernels.hpp"

namespace k = smp::kernels;

namespace {

struct Case {
  const char* name;
  smp::Shape input, kernel;
  std::int64_t stride;
};

template <class F>
double time_ms(F&& f, int reps) {
  f();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<smp::Real> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<smp::Real> d(-1, 1);
  std::vector<smp::Real> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double max_diff(const std::vector<smp::Real>& a, const std::vector<smp::Real>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, static_cast<double>(std::abs(a[i] - b[i])));
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 20, threads = 0;
  CLI::App app{"Serial vs OpenMP conv2d timings"};
  app.add_option("--reps", reps, "Timed repetitions per kernel")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "OpenMP threads (0 = default)")->check(CLI::NonNegativeNumber);
  CLI11_PARSE(app, argc, argv);
  k::set_num_threads(threads);
  const std::vector<Case> cases{
      {"stem 64x64 1->8 s2", {3, 64, 64, 1}, {3, 3, 1, 8}, 2},
      {"down 32x32 8->16 s2", {3, 32, 32, 8}, {3, 3, 8, 16}, 2},
      {"body 16x16 16->16", {3, 16, 16, 16}, {3, 3, 16, 16}, 1},
      {"head 16x16 16->6 1x1", {3, 16, 16, 16}, {1, 1, 16, 6}, 1},
  };
  std::mt19937_64 rng(7);
  std::printf("threads %d, %d reps\n", k::max_threads(), reps);
  std::printf("%-24s %12s %12s %12s %12s %12s %12s %s\n", "case", "fwd serial", "fwd omp", "bin serial", "bin omp",
              "bker serial", "bker omp", "max diff");
  bool all_match = true;
  for (const auto& c : cases) {
    const auto g = k::make_geometry(c.input, c.kernel, c.stride, c.kernel[0] / 2);
    const auto x = random_vec(static_cast<std::size_t>(g.input_size()), rng);
    const auto w = random_vec(static_cast<std::size_t>(g.kernel_size()), rng);
    const auto gy = random_vec(static_cast<std::size_t>(g.output_size()), rng);
    std::vector<smp::Real> ys(g.output_size()), yp(g.output_size());
    std::vector<smp::Real> gxs(g.input_size()), gxp(g.input_size()), gws(g.kernel_size()), gwp(g.kernel_size());

    const double fs = time_ms([&] { k::serial::conv2d_forward(g, x, w, ys); }, reps);
    const double fp = time_ms([&] { k::parallel::conv2d_forward(g, x, w, yp); }, reps);
    const double is = time_ms([&] {
      std::fill(gxs.begin(), gxs.end(), 0);
      k::serial::conv2d_backward_input(g, gy, w, gxs);
    }, reps);
    const double ip = time_ms([&] {
      std::fill(gxp.begin(), gxp.end(), 0);
      k::parallel::conv2d_backward_input(g, gy, w, gxp);
    }, reps);
    const double ks = time_ms([&] {
      std::fill(gws.begin(), gws.end(), 0);
      k::serial::conv2d_backward_kernel(g, x, gy, gws);
    }, reps);
    const double kp = time_ms([&] {
      std::fill(gwp.begin(), gwp.end(), 0);
      k::parallel::conv2d_backward_kernel(g, x, gy, gwp);
    }, reps);
    const double diff = std::max({max_diff(ys, yp), max_diff(gxs, gxp), max_diff(gws, gwp)});
    all_match = all_match && diff < 1e-9;
    std::printf("%-24s %10.3fms %10.3fms %10.3fms %10.3fms %10.3fms %10.3fms %.2e\n", c.name, fs, fp, is, ip, ks, kp,
                diff);
  }
  return all_match ? 0 : 1;
}
