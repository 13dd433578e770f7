#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "smp/ops.hpp"
#include "smp/targets.hpp"

using smp::Instance;
using smp::Point;
using smp::Real;
using smp::Tensor;
namespace tg = smp::targets;

namespace {

Real at(const Tensor& t, std::int64_t r, std::int64_t c, std::int64_t k) {
  return t[(r * t.dim(1) + c) * t.dim(2) + k];
}

Real total(const Tensor& t) {
  Real s = 0;
  for (auto v : t.data()) s += v;
  return s;
}

Instance one_part(Real r, Real c) { return smp::make_instance({{r, c}}); }

std::vector<Instance> random_instances(std::mt19937_64& rng, std::size_t n, std::size_t parts, Real extent) {
  std::uniform_real_distribution<Real> u(0, extent);
  std::bernoulli_distribution hidden(0.15);
  std::vector<Instance> out;
  for (std::size_t i = 0; i < n; ++i) {
    Instance inst;
    for (std::size_t k = 0; k < parts; ++k) {
      inst.keypoints.push_back({u(rng), u(rng)});
      inst.visible.push_back(!hidden(rng));
    }
    out.push_back(inst);
  }
  return out;
}

smp::PseudoLabels pseudo(std::vector<smp::CellIndex> idx, std::vector<Real> v, std::vector<Real> coords,
                         bool grad = false) {
  const auto n = static_cast<std::int64_t>(idx.size());
  return {std::move(idx), std::move(v), Tensor({n, 2}, std::move(coords), grad)};
}

}  // namespace

TEST_CASE("cell rounding sends halves down") {
  CHECK(tg::round_to_cell(2.5) == 2);
  CHECK(tg::round_to_cell(2.51) == 3);
  CHECK(tg::round_to_cell(-0.5) == -1);
  CHECK(tg::round_to_cell(3.49) == 3);
  CHECK(tg::round_to_cell(0) == 0);
}

TEST_CASE("grid coordinates") {
  auto one = tg::grid_coordinates(1, 1);
  CHECK(one.shape() == smp::Shape{1, 1, 2});
  CHECK(one[0] == 0);
  CHECK(one[1] == 0);
  auto m = tg::grid_coordinates(5, 6);
  CHECK(m[(2 * 6 + 3) * 2] == 2);
  CHECK(m[(2 * 6 + 3) * 2 + 1] == 3);
  auto s = smp::ops::sum(tg::grid_coordinates(2, 2), {0, 1});
  CHECK(s[0] == 2);
  CHECK(s[1] == 2);
}

TEST_CASE("keypoint target windows") {
  std::vector<Instance> single{one_part(3, 3)};
  auto g = tg::build_keypoint_target(single, 7, 7, 1, 1);
  CHECK(total(g) == 9);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 7; ++c) CHECK(at(g, r, c, 0) == ((r >= 2 && r <= 4 && c >= 2 && c <= 4) ? 1 : 0));

  auto g0 = tg::build_keypoint_target(std::vector<Instance>{one_part(2.4, 3.6)}, 7, 7, 1, 0);
  CHECK(total(g0) == 1);
  CHECK(at(g0, 2, 4, 0) == 1);

  std::vector<Instance> two{one_part(1, 1), one_part(2, 2)};
  auto gu = tg::build_keypoint_target(two, 5, 5, 1, 1);
  int expected = 0;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      const bool in = (std::abs(r - 1) <= 1 && std::abs(c - 1) <= 1) || (std::abs(r - 2) <= 1 && std::abs(c - 2) <= 1);
      expected += in;
      CHECK(at(gu, r, c, 0) == (in ? 1 : 0));
    }
  CHECK(expected == 14);
  CHECK(total(gu) == 14);

  // Border clipping.
  CHECK(total(tg::build_keypoint_target(std::vector<Instance>{one_part(0, 0)}, 4, 4, 1, 1)) == 4);
}

TEST_CASE("invisible keypoints do not enter the targets") {
  Instance inst = smp::make_instance({{1, 1}, {4, 4}});
  inst.visible[1] = false;
  std::vector<Instance> v{inst};
  auto g = tg::build_keypoint_target(v, 6, 6, 2, 1);
  Real part1 = 0;
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) part1 += at(g, r, c, 1);
  CHECK(part1 == 0);
  auto f = tg::build_vector_field(v, 6, 6, 2);
  CHECK(f.part_present == std::vector<bool>{true, false});
  for (std::int64_t i = 0; i < 36; ++i) {
    CHECK(f.offsets[i * 4 + 2] == 0);
    CHECK(f.offsets[i * 4 + 3] == 0);
  }
  const auto box = tg::pseudo_box(inst, 6, 6);
  CHECK(box == smp::Box{1, 1, 1, 1});
}

TEST_CASE("pseudo boxes") {
  CHECK(tg::pseudo_box(smp::make_instance({{1, 1}, {3, 4}}), 10, 10) == smp::Box{1, 1, 3, 4});
  CHECK(tg::pseudo_box(smp::make_instance({{2, 2}}), 10, 10) == smp::Box{2, 2, 2, 2});
  CHECK(tg::pseudo_box(smp::make_instance({{0, 5}, {4, 1}, {2, 3}}), 10, 10) == smp::Box{0, 1, 4, 5});
  CHECK(tg::pseudo_box(smp::make_instance({{0, 5}, {4, 1}}), 10, 10, 2) == smp::Box{0, 0, 6, 7});
  Instance hidden = smp::make_instance({{1, 1}});
  hidden.visible[0] = false;
  CHECK_THROWS_AS(tg::pseudo_box(hidden, 5, 5), std::invalid_argument);
}

TEST_CASE("box target") {
  CHECK(total(tg::build_box_target({}, 5, 5, 3)) == 0);
  std::vector<Instance> one{smp::make_instance({{1, 1}, {3, 4}})};
  auto u = tg::build_box_target(one, 5, 5, 2);
  for (int k = 0; k < 2; ++k) {
    Real s = 0;
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) s += at(u, r, c, k);
    CHECK(s == 12);
  }
  std::vector<Instance> two{smp::make_instance({{0, 0}, {1, 2}}), smp::make_instance({{4, 4}, {6, 7}})};
  CHECK(total(tg::build_box_target(two, 8, 8, 2)) == 2 * (2 * 3 + 3 * 4));
}

TEST_CASE("vector field examples") {
  std::vector<Instance> one{one_part(2, 2)};
  auto f = tg::build_vector_field(one, 3, 3, 1).offsets;
  CHECK(f.shape() == smp::Shape{3, 3, 1, 2});
  CHECK(f[0] == 2);
  CHECK(f[1] == 2);
  CHECK(f[(2 * 3 + 2) * 2] == 0);
  CHECK(f[(2 * 3 + 2) * 2 + 1] == 0);

  std::vector<Instance> tie{one_part(0, 0), one_part(2, 2)};
  auto t = tg::build_vector_field(tie, 3, 3, 1).offsets;
  CHECK(t[(1 * 3 + 1) * 2] == -1);
  CHECK(t[(1 * 3 + 1) * 2 + 1] == -1);
  std::vector<Instance> swapped{one_part(2, 2), one_part(0, 0)};
  auto s = tg::build_vector_field(swapped, 3, 3, 1).offsets;
  CHECK(s[(1 * 3 + 1) * 2] == 1);
}

TEST_CASE("vector field equals a brute-force nearest-keypoint search") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = random_instances(rng, 3, 3, 5);
    const auto f = tg::build_vector_field(inst, 6, 6, 3);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c)
        for (int k = 0; k < 3; ++k) {
          Point want{};
          const auto base = ((r * 6 + c) * 3 + k) * 2;
          if (!oracle::nearest_keypoint(inst, static_cast<std::size_t>(k), r, c, want)) {
            CHECK_FALSE(f.part_present[static_cast<std::size_t>(k)]);
            continue;
          }
          CHECK(f.offsets[base] + r == doctest::Approx(want.row).epsilon(1e-14));
          CHECK(f.offsets[base + 1] + c == doctest::Approx(want.col).epsilon(1e-14));
        }
  }
}

TEST_CASE("vector field vanishes on integral keypoints") {
  std::vector<Instance> inst{smp::make_instance({{1, 2}, {4, 0}}), smp::make_instance({{5, 5}, {0, 3}})};
  auto f = tg::build_vector_field(inst, 6, 6, 2).offsets;
  for (const auto& i : inst)
    for (std::int64_t k = 0; k < 2; ++k) {
      const auto base = ((static_cast<std::int64_t>(i.keypoints[k].row) * 6 + static_cast<std::int64_t>(i.keypoints[k].col)) * 2 + k) * 2;
      CHECK(f[base] == 0);
      CHECK(f[base + 1] == 0);
    }
}

TEST_CASE("keypoint target is invariant to instance order") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    auto inst = random_instances(rng, 4, 3, 9);
    auto a = tg::build_keypoint_target(inst, 10, 10, 3);
    std::shuffle(inst.begin(), inst.end(), rng);
    auto b = tg::build_keypoint_target(inst, 10, 10, 3);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  }
}

TEST_CASE("pseudo targets") {
  auto one = pseudo({{3, 3, 0}}, {1}, {3, 3});
  auto pt = tg::build_pseudo_target(one, 7, 7, 1);
  auto g = tg::build_keypoint_target(std::vector<Instance>{one_part(3, 3)}, 7, 7, 1);
  CHECK(std::equal(pt.target.data().begin(), pt.target.data().end(), g.data().begin()));
  for (auto w : pt.weights.data()) CHECK(w == 1);

  auto zero = pseudo({{3, 3, 0}}, {0}, {3, 3});
  CHECK(total(tg::build_pseudo_target(zero, 7, 7, 1).scores()) == 0);

  auto overlap = pseudo({{1, 1, 0}, {2, 2, 0}}, {0.3, 0.9}, {1, 1, 2, 2});
  auto po = tg::build_pseudo_target(overlap, 5, 5, 1);
  auto sc = po.scores();
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      const bool a = std::abs(r - 1) <= 1 && std::abs(c - 1) <= 1, b = std::abs(r - 2) <= 1 && std::abs(c - 2) <= 1;
      CHECK(at(sc, r, c, 0) == (b ? 0.9 : a ? 0.3 : 0));
    }

  CHECK_THROWS_AS(tg::build_pseudo_target(pseudo({{0, 0, 0}}, {1.2}, {0, 0}), 3, 3, 1), std::invalid_argument);
  CHECK_THROWS_AS(tg::build_pseudo_target(pseudo({{0, 0, 0}}, {-0.1}, {0, 0}), 3, 3, 1), std::invalid_argument);
}

TEST_CASE("ground truth as pseudo labels reproduces the keypoint target bit-exactly") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instances(rng, 3, 3, 11);
    std::vector<smp::CellIndex> idx;
    std::vector<Real> v, coords;
    for (const auto& i : inst)
      for (std::int64_t k = 0; k < 3; ++k) {
        if (!i.visible[k]) continue;
        idx.push_back({0, 0, k});
        v.push_back(1);
        coords.push_back(i.keypoints[k].row);
        coords.push_back(i.keypoints[k].col);
      }
    if (idx.empty()) continue;
    auto pt = tg::build_pseudo_target(pseudo(idx, v, coords), 12, 12, 3);
    auto g = tg::build_keypoint_target(inst, 12, 12, 3);
    auto sc = pt.scores();
    CHECK(std::equal(sc.data().begin(), sc.data().end(), g.data().begin()));
  }
}

TEST_CASE("soft pseudo scores") {
  auto p = pseudo({{2, 3, 1}, {4, 4, 0}}, {0.7, 0.4}, {2, 3, 4, 4});
  std::vector<smp::PseudoLabels> frames{p, smp::PseudoLabels{}};
  auto soft = tg::soft_pseudo_scores(frames, 7, 7, 2);
  auto hard = tg::build_pseudo_target(p, 7, 7, 2).scores();
  CHECK(soft.shape() == smp::Shape{2, 7, 7, 2});
  for (std::int64_t i = 0; i < hard.size(); ++i) CHECK(soft[i] == hard[i]);
  for (std::int64_t i = hard.size(); i < soft.size(); ++i) CHECK(soft[i] == 0);

  std::mt19937_64 rng(14);
  auto weights = oracle::random_tensor({1, 7, 7, 2}, rng);
  auto f = [&](const std::vector<Real>& coords) {
    smp::PseudoLabels q{{{2, 3, 1}, {4, 4, 0}}, {0.7, 0.4}, Tensor({2, 2}, coords)};
    std::vector<smp::PseudoLabels> fr{q};
    return smp::ops::sum(smp::ops::mul(tg::soft_pseudo_scores(fr, 7, 7, 2), weights)).item();
  };
  const std::vector<Real> at_coords{2.3, 3.6, 4.2, 3.85};
  auto q = pseudo({{2, 3, 1}, {4, 4, 0}}, {0.7, 0.4}, at_coords, true);
  std::vector<smp::PseudoLabels> fr{q};
  smp::backward(smp::ops::sum(smp::ops::mul(tg::soft_pseudo_scores(fr, 7, 7, 2), weights)));
  const std::vector<Real> analytic(q.coords.grad().begin(), q.coords.grad().end());
  CHECK(oracle::max_relative_error(analytic, oracle::numeric_gradient(f, at_coords)) <= 1e-6);
}

TEST_CASE("batched targets") {
  std::vector<std::vector<Instance>> frames{{smp::make_instance({{1, 1}, {2, 3}})}, {}};
  auto t = tg::build_targets(frames, 5, 6, 2);
  CHECK(t.keypoints.shape() == smp::Shape{2, 5, 6, 2});
  CHECK(t.boxes.shape() == smp::Shape{2, 5, 6, 2});
  CHECK(t.vectors.shape() == smp::Shape{2, 5, 6, 2, 2});
  Real second = 0;
  for (std::int64_t i = 60; i < 120; ++i) second += t.keypoints[i] + t.boxes[i];
  CHECK(second == 0);
  CHECK_THROWS_AS(tg::build_keypoint_target(std::vector<Instance>{one_part(1, 1)}, 4, 4, 2), std::invalid_argument);
}
