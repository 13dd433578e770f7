#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "smp/kernels.hpp"
#include "smp/ops.hpp"
#include "smp/optim.hpp"

using smp::Real;
using smp::Tensor;
namespace ops = smp::ops;

TEST_CASE("conv2d small cases") {
  auto ones = Tensor::full({1, 3, 3, 1}, 1);
  auto k = Tensor::full({3, 3, 1, 1}, 1);
  auto y = ops::conv2d(ones, k, 1, 0);
  CHECK(y.shape() == smp::Shape{1, 1, 1, 1});
  CHECK(y.item() == 9);

  std::mt19937_64 rng(1);
  auto x = oracle::random_tensor({2, 4, 5, 3}, rng);
  std::vector<Real> eye(9, 0);
  eye[0] = eye[4] = eye[8] = 1;
  auto same = ops::conv2d(x, Tensor({1, 1, 3, 3}, eye), 1, 0);
  CHECK(std::equal(same.data().begin(), same.data().end(), x.data().begin()));
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(2);
  struct C {
    std::int64_t n, h, w, cin, kh, cout, stride, pad;
  };
  for (auto c : {C{1, 5, 5, 2, 3, 3, 1, 0}, C{2, 8, 7, 3, 3, 4, 2, 1}, C{1, 6, 8, 1, 1, 2, 1, 0},
                 C{3, 8, 8, 2, 3, 2, 1, 1}, C{1, 7, 5, 4, 3, 1, 2, 0}}) {
    auto x = oracle::random_tensor({c.n, c.h, c.w, c.cin}, rng);
    auto k = oracle::random_tensor({c.kh, c.kh, c.cin, c.cout}, rng);
    const auto want = oracle::conv2d({x.data().begin(), x.data().end()}, c.n, c.h, c.w, c.cin,
                                     {k.data().begin(), k.data().end()}, c.kh, c.kh, c.cout, c.stride, c.pad);
    for (auto backend : {smp::kernels::Backend::Serial, smp::kernels::Backend::Parallel}) {
      smp::kernels::set_backend(backend);
      auto y = ops::conv2d(x, k, c.stride, c.pad);
      REQUIRE(static_cast<std::size_t>(y.size()) == want.size());
      for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(y[static_cast<std::int64_t>(i)] - want[i]) <= 1e-12);
    }
  }
  smp::kernels::set_backend(smp::kernels::Backend::Parallel);
}

TEST_CASE("conv2d rejects mismatched channels") {
  CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 4, 4, 2}), Tensor::zeros({3, 3, 3, 1}), 1, 1), smp::ShapeError);
}

TEST_CASE("serial and parallel kernels agree for any thread count") {
  std::mt19937_64 rng(3);
  const auto g = smp::kernels::make_geometry({2, 9, 8, 3}, {3, 3, 3, 4}, 2, 1);
  const auto x = oracle::random_values(static_cast<std::size_t>(g.input_size()), rng);
  const auto w = oracle::random_values(static_cast<std::size_t>(g.kernel_size()), rng);
  const auto gy = oracle::random_values(static_cast<std::size_t>(g.output_size()), rng);
  std::vector<Real> ys(g.output_size()), gxs(g.input_size()), gws(g.kernel_size());
  smp::kernels::serial::conv2d_forward(g, x, w, ys);
  smp::kernels::serial::conv2d_backward_input(g, gy, w, gxs);
  smp::kernels::serial::conv2d_backward_kernel(g, x, gy, gws);
  for (int threads : {1, 2, 3}) {
    smp::kernels::set_num_threads(threads);
    std::vector<Real> yp(g.output_size()), gxp(g.input_size()), gwp(g.kernel_size());
    smp::kernels::parallel::conv2d_forward(g, x, w, yp);
    smp::kernels::parallel::conv2d_backward_input(g, gy, w, gxp);
    smp::kernels::parallel::conv2d_backward_kernel(g, x, gy, gwp);
    CHECK(yp == ys);
    CHECK(gwp == gws);
    for (std::size_t i = 0; i < gxs.size(); ++i) CHECK(std::abs(gxp[i] - gxs[i]) <= 1e-12);
  }
  smp::kernels::set_num_threads(0);
}

TEST_CASE("elementwise primitives") {
  CHECK(ops::sigmoid(Tensor::scalar(0)).item() == 0.5);
  std::mt19937_64 rng(4);
  auto x = oracle::random_tensor({50}, rng, -20, 20);
  auto s = ops::add(ops::sigmoid(x), ops::sigmoid(ops::scale(x, -1)));
  for (auto v : s.data()) CHECK(v == doctest::Approx(1).epsilon(1e-15));
  CHECK(ops::relu(Tensor::scalar(-3.2)).item() == 0);
  CHECK(ops::relu(Tensor::scalar(3.2)).item() == 3.2);
  CHECK_THROWS_AS(ops::log(Tensor({2}, {1, 0})), smp::DomainError);
  CHECK_THROWS_AS(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({2})), smp::ShapeError);
  auto b = ops::add(Tensor::zeros({2, 3}), Tensor({3}, {1, 2, 3}));
  CHECK(std::vector<Real>(b.data().begin(), b.data().end()) == std::vector<Real>{1, 2, 3, 1, 2, 3});
}

TEST_CASE("reductions") {
  CHECK(ops::sum(Tensor({3}, {1, 2, 3})).item() == 6);
  CHECK(ops::mean(Tensor::full({4, 5}, 2.5)).item() == 2.5);
  auto m = Tensor({4}, {3, 7, 7, 1}, true);
  auto r = ops::max(m);
  CHECK(r.item() == 7);
  smp::backward(r);
  CHECK(std::vector<Real>(m.grad().begin(), m.grad().end()) == std::vector<Real>{0, 1, 0, 0});
  auto rows = ops::sum(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), {1});
  CHECK(std::vector<Real>(rows.data().begin(), rows.data().end()) == std::vector<Real>{6, 15});
}

TEST_CASE("softmax2d") {
  auto u = ops::softmax2d(Tensor::zeros({3, 4}));
  for (auto v : u.data()) CHECK(v == doctest::Approx(1.0 / 12));
  std::vector<Real> spike(12, 0);
  spike[5] = 50;
  CHECK(std::abs(ops::softmax2d(Tensor({3, 4}, spike))[5] - 1) <= 1e-15);
  auto e = ops::softmax2d(Tensor({2, 2}, {0, std::log(2.0), 0, 0}));
  const std::vector<Real> want{0.2, 0.4, 0.2, 0.2};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(e[i] - want[static_cast<std::size_t>(i)]) <= 1e-15);
  std::mt19937_64 rng(5);
  auto r = ops::softmax2d(oracle::random_tensor({6, 7}, rng, -5, 5));
  Real total = 0;
  for (auto v : r.data()) total += v;
  CHECK(std::abs(total - 1) <= 1e-12);
}

TEST_CASE("backward on small graphs") {
  auto x = Tensor({2}, {1, 2}, true);
  smp::backward(ops::sum(ops::mul(x, x)));
  CHECK(std::vector<Real>(x.grad().begin(), x.grad().end()) == std::vector<Real>{2, 4});

  const Real c = 1.7, w0 = 0.3;
  auto w = Tensor({}, {w0}, true);
  smp::backward(ops::scale(ops::sigmoid(w), c));
  const Real s = 1 / (1 + std::exp(-w0));
  CHECK(w.grad()[0] == doctest::Approx(c * s * (1 - s)).epsilon(1e-14));
}

TEST_CASE("backward errors") {
  auto x = Tensor({2}, {1, 2}, true);
  CHECK_THROWS_AS(smp::backward(ops::mul(x, x)), smp::GradError);
  auto root = ops::sum(ops::mul(x, x));
  smp::backward(root);
  CHECK_THROWS_AS(smp::backward(root), smp::GradError);
  auto again = ops::sum(x);
  CHECK_THROWS_AS(smp::backward(again), smp::GradError);
  x.zero_grad();
  smp::backward(again);
  CHECK(x.grad()[0] == 1);
  CHECK_THROWS_AS(smp::backward(ops::sum(Tensor({2}, {1, 2}))), smp::GradError);
}

TEST_CASE("non-finite values fail fast") {
  auto big = Tensor::scalar(1000);
  CHECK_THROWS_AS(ops::exp(big), smp::NumericError);
  CHECK_THROWS_AS(Tensor({1}, {std::nan("")}), smp::NumericError);
}

TEST_CASE("every primitive matches central differences") {
  std::mt19937_64 rng(6);
  // Each case maps a leaf to a scalar; the oracle rebuilds it from raw values.
  struct Case {
    const char* name;
    smp::Shape shape;
    Real lo, hi;
    std::function<Tensor(const Tensor&)> f;
  };
  auto w = oracle::random_tensor({3, 3, 2, 2}, rng);
  auto other = oracle::random_tensor({3, 4}, rng);
  const std::vector<Case> cases{
      {"add", {3, 4}, -1, 1, [&](const Tensor& t) { return ops::sum(ops::mul(ops::add(t, other), other)); }},
      {"sub", {3, 4}, -1, 1, [&](const Tensor& t) { return ops::sum(ops::mul(ops::sub(other, t), t)); }},
      {"broadcast", {4}, -1, 1, [&](const Tensor& t) { return ops::sum(ops::mul(ops::add(other, t), other)); }},
      {"sigmoid", {3, 4}, -3, 3, [&](const Tensor& t) { return ops::sum(ops::mul(ops::sigmoid(t), other)); }},
      {"relu", {3, 4}, 0.1, 1, [&](const Tensor& t) { return ops::sum(ops::mul(ops::relu(t), other)); }},
      {"log", {3, 4}, 0.2, 2, [&](const Tensor& t) { return ops::sum(ops::mul(ops::log(t), other)); }},
      {"exp", {3, 4}, -1, 1, [&](const Tensor& t) { return ops::sum(ops::mul(ops::exp(t), other)); }},
      {"power", {3, 4}, 0.2, 2, [&](const Tensor& t) { return ops::sum(ops::mul(ops::power(t, 2.5), other)); }},
      {"clamp", {3, 4}, 0.2, 0.8, [&](const Tensor& t) { return ops::sum(ops::mul(ops::clamp(t, 0, 1), other)); }},
      {"mean axes", {3, 4}, -1, 1, [&](const Tensor& t) { return ops::sum(ops::mul(ops::mean(ops::mul(t, t), {0}), ops::select(other, 0))); }},
      {"max", {3, 4}, -1, 1, [&](const Tensor& t) { return ops::sum(ops::max(ops::mul(t, other), {1})); }},
      {"softmax2d", {3, 4}, -2, 2, [&](const Tensor& t) { return ops::sum(ops::mul(ops::softmax2d(t), other)); }},
      {"conv2d", {2, 5, 6, 2}, -1, 1, [&](const Tensor& t) { return ops::sum(ops::mul(ops::conv2d(t, w, 2, 1), ops::conv2d(t, w, 2, 1))); }},
      {"reshape gather", {3, 4}, -1, 1, [&](const Tensor& t) {
         const std::vector<std::int64_t> idx{0, 5, 5, 11};
         return ops::sum(ops::mul(ops::gather(ops::reshape(t, {12}), idx), ops::gather(ops::reshape(t, {12}), idx)));
       }},
  };
  for (const auto& c : cases) {
    MESSAGE(std::string(c.name));
    auto x = oracle::random_tensor(c.shape, rng, c.lo, c.hi, true);
    smp::backward(c.f(x));
    const std::vector<Real> analytic(x.grad().begin(), x.grad().end());
    const auto numeric = oracle::numeric_gradient(
        [&](const std::vector<Real>& v) { return c.f(Tensor(c.shape, v)).item(); },
        {x.data().begin(), x.data().end()});
    CHECK(oracle::max_relative_error(analytic, numeric) <= 1e-4);
  }
}

TEST_CASE("grad_check") {
  std::mt19937_64 rng(7);
  auto x = oracle::random_tensor({5}, rng);
  // Integral points and a power-of-two step keep every difference exact.
  auto ints = Tensor({5}, {1, 2, 3, 4, 5});
  CHECK(smp::grad_check([](const Tensor& t) { return ops::sum(t); }, ints, 1.0 / 65536) == 0);
  CHECK(smp::grad_check([](const Tensor& t) { return ops::sum(ops::mul(ops::sigmoid(t), t)); }, x, 1e-5) <= 1e-6);
  // A wrong derivative is caught.
  auto broken = [](const Tensor& t) {
    auto y = ops::sum(ops::mul(t, t));
    return smp::make_result("broken", {}, {y.item()}, {t}, [t](std::span<const Real> g) {
      auto& gr = t.impl()->ensure_grad();
      for (auto& v : gr) v += g[0];
    });
  };
  CHECK(smp::grad_check(broken, x, 1e-5) > 0.1);
}

TEST_CASE("sgd") {
  auto p = Tensor({1}, {0}, true);
  smp::backward(ops::sum(p));
  std::vector<Tensor> ps{p};
  smp::sgd_step(ps, 0.01);
  CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-15));
  CHECK_FALSE(p.has_grad());

  auto q = Tensor({2}, {0.5, -2}, true);
  smp::backward(ops::sum(ops::mul(q, q)));
  std::vector<Tensor> qs{q};
  smp::sgd_step(qs, 0);
  CHECK(q[0] == 0.5);
  CHECK(q[1] == -2);

  auto r = Tensor({1}, {1}, true);
  std::vector<Tensor> rs{r};
  for (int i = 0; i < 2; ++i) {
    smp::backward(ops::sum(ops::mul(r, r)));
    smp::sgd_step(rs, 0.1);
  }
  CHECK(r[0] == doctest::Approx(0.64).epsilon(1e-14));
  CHECK_THROWS_AS(smp::sgd_step(rs, 0.1), smp::GradError);
}

TEST_CASE("momentum and clipping") {
  auto a = Tensor({1}, {1}, true), b = Tensor({1}, {1}, true);
  std::vector<Tensor> as{a}, bs{b};
  smp::MomentumSgd plain(0);
  for (int i = 0; i < 3; ++i) {
    smp::backward(ops::sum(ops::mul(a, a)));
    plain.step(as, 0.1);
    smp::backward(ops::sum(ops::mul(b, b)));
    smp::sgd_step(bs, 0.1);
  }
  CHECK(a[0] == b[0]);

  // v1 = 2, p = 1 - 0.2 = 0.8; v2 = 0.9*2 + 1.6 = 3.4, p = 0.8 - 0.34 = 0.46
  auto m = Tensor({1}, {1}, true);
  std::vector<Tensor> ms{m};
  smp::MomentumSgd heavy(0.9);
  for (int i = 0; i < 2; ++i) {
    smp::backward(ops::sum(ops::mul(m, m)));
    heavy.step(ms, 0.1);
  }
  CHECK(m[0] == doctest::Approx(0.46).epsilon(1e-14));

  auto c = Tensor({2}, {3, 4}, true);
  std::vector<Tensor> cs{c};
  smp::MomentumSgd clip(0, 1);
  smp::backward(ops::scale(ops::sum(ops::mul(c, c)), 0.5));  // grad = (3,4), norm 5
  clip.step(cs, 1);
  CHECK(clip.last_grad_norm() == doctest::Approx(5));
  CHECK(c[0] == doctest::Approx(3 - 0.6));
  CHECK(c[1] == doctest::Approx(4 - 0.8));
}

TEST_CASE("engine is deterministic") {
  std::mt19937_64 rng(8);
  auto x = oracle::random_tensor({2, 8, 8, 3}, rng);
  auto k = oracle::random_tensor({3, 3, 3, 4}, rng);
  auto y1 = ops::sigmoid(ops::conv2d(x, k, 1, 1));
  auto y2 = ops::sigmoid(ops::conv2d(x, k, 1, 1));
  CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}
