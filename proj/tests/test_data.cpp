#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "smp/data.hpp"
#include "smp/targets.hpp"

using smp::Real;
using smp::Tensor;
namespace dt = smp::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("smp_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_scene(const dt::Scene& a, const dt::Scene& b) {
  return a.id == b.id && a.instances == b.instances && a.image.shape() == b.image.shape() &&
         std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin());
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(); }

nlohmann::json tiny_file(std::vector<Real> keypoints) {
  std::vector<Real> px(4 * 5, 0.5);
  return {{"meta", {{"K", 2}, {"skeleton", {"a", "b"}}}},
          {"images", {{{"id", 7}, {"height", 4}, {"width", 5}, {"channels", 1}, {"pixels", px}}}},
          {"annotations", {{{"image_id", 7}, {"instance_id", 42}, {"keypoints", keypoints}}}}};
}

}  // namespace

TEST_CASE("scenes are deterministic and well formed") {
  dt::DatasetSpec spec;
  auto a = dt::generate_scene(spec, 17), b = dt::generate_scene(spec, 17), c = dt::generate_scene(spec, 18);
  CHECK(same_scene(a, b));
  CHECK_FALSE(same_scene(a, c));
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto sc = dt::generate_scene(spec, s);
    CHECK(sc.image.shape() == smp::Shape{64, 64, 1});
    for (auto v : sc.image.data()) {
      CHECK(v >= 0);
      CHECK(v <= 1);
    }
    CHECK(static_cast<std::int64_t>(sc.instances.size()) >= spec.min_instances);
    CHECK(static_cast<std::int64_t>(sc.instances.size()) <= spec.max_instances);
    for (const auto& inst : sc.instances) {
      CHECK(inst.num_parts() == 3);
      for (const auto& p : inst.keypoints) {
        CHECK(p.row >= spec.keypoint_margin);
        CHECK(p.row <= 63 - spec.keypoint_margin);
        CHECK(p.col >= spec.keypoint_margin);
        CHECK(p.col <= 63 - spec.keypoint_margin);
      }
    }
  }
}

TEST_CASE("instance counts") {
  dt::DatasetSpec spec;
  spec.min_instances = spec.max_instances = 1;
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(dt::generate_scene(spec, s).instances.size() == 1);

  // Uniform on [1,5]: each bin within 3 binomial standard deviations of 200.
  spec.min_instances = 1;
  spec.max_instances = 5;
  spec.min_keypoint_separation = 4;
  std::array<int, 5> hist{};
  for (std::uint64_t s = 0; s < 1000; ++s) ++hist[dt::generate_scene(spec, s).instances.size() - 1];
  const double sd = std::sqrt(1000 * 0.2 * 0.8);
  for (int h : hist) CHECK(std::abs(h - 200) <= 3 * sd);
}

TEST_CASE("spec validation") {
  dt::DatasetSpec spec;
  spec.scale_min = 60;
  spec.scale_max = 60;
  CHECK_THROWS_AS(dt::generate_scene(spec, 0), std::invalid_argument);
  spec = {};
  spec.parts = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = {};
  spec.n_labeled = 50;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = {};
  spec.min_instances = 3;
  spec.max_instances = 2;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("jitter is off by default and perturbs annotations when on") {
  dt::DatasetSpec spec;
  spec.annotation_jitter = 0.5;
  auto clean = dt::generate_scene(dt::DatasetSpec{}, 3), noisy = dt::generate_scene(spec, 3);
  REQUIRE(clean.instances.size() == noisy.instances.size());
  CHECK(clean.instances != noisy.instances);
}

TEST_CASE("paste and overlay") {
  dt::DatasetSpec spec;
  auto scene = dt::generate_scene(spec, 5);
  auto crops = dt::extract_crops(scene);
  REQUIRE(!crops.empty());
  const auto& crop = crops[0];
  dt::Scene bg{0, Tensor::zeros({64, 64, 1}), {}};
  auto pasted = dt::paste_crop(bg, crop, 10, 20);
  REQUIRE(pasted.instances.size() == 1);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(pasted.instances[0].keypoints[k].row == crop.instance.keypoints[k].row + 10);
    CHECK(pasted.instances[0].keypoints[k].col == crop.instance.keypoints[k].col + 20);
  }
  CHECK_THROWS_AS(dt::paste_crop(bg, crop, 64 - crop.image.dim(0) + 1, 0), std::invalid_argument);

  std::vector<dt::Crop> pool;
  for (std::uint64_t s = 0; s < 6; ++s)
    for (auto& c : dt::extract_crops(dt::generate_scene(spec, s))) pool.push_back(c);
  Tensor background = Tensor::full({96, 96, 1}, 0.2);
  auto o1 = dt::overlay_augment(pool, background, 10, 9), o2 = dt::overlay_augment(pool, background, 10, 9);
  CHECK(o1.instances.size() == 10);
  CHECK(same_scene(o1, o2));
  for (const auto& inst : o1.instances)
    for (const auto& p : inst.keypoints) {
      CHECK(p.row >= 0);
      CHECK(p.row <= 95);
      CHECK(p.col >= 0);
      CHECK(p.col <= 95);
    }
  // No crop repeats inside one composite while the pool lasts.
  std::set<std::vector<Real>> shapes;
  for (const auto& inst : o1.instances) {
    const auto& k = inst.keypoints;
    shapes.insert({k[1].row - k[0].row, k[1].col - k[0].col, k[2].row - k[0].row, k[2].col - k[0].col});
  }
  if (pool.size() >= 10) CHECK(shapes.size() == 10);
  CHECK_THROWS_AS(dt::overlay_augment(pool, Tensor::zeros({8, 8, 1}), 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(dt::overlay_augment(pool, background, 0, 0), std::invalid_argument);
}

TEST_CASE("splits") {
  dt::DatasetSpec spec;
  spec.n_pool = 45;
  spec.n_unlabeled = 3;
  spec.n_test = 4;
  auto ds = dt::generate_dataset(spec);
  auto s = dt::make_splits(ds, 5, 0);
  CHECK(s.labeled.size() == 5);
  CHECK(s.unlabeled.size() == 40 + 3);
  CHECK(s.test.size() == 4);
  std::set<std::int64_t> ids;
  for (const auto& x : s.labeled) ids.insert(x.id);
  for (const auto& x : s.unlabeled) ids.insert(x.id);
  for (const auto& x : s.test) ids.insert(x.id);
  CHECK(ids.size() == 5 + 43 + 4);

  auto again = dt::make_splits(ds, 5, 0), other = dt::make_splits(ds, 5, 1);
  std::vector<std::int64_t> a, b, c;
  for (const auto& x : s.labeled) a.push_back(x.id);
  for (const auto& x : again.labeled) b.push_back(x.id);
  for (const auto& x : other.labeled) c.push_back(x.id);
  CHECK(a == b);
  CHECK(a != c);
  CHECK_THROWS_AS(dt::make_splits(ds, 46, 0), std::invalid_argument);
}

TEST_CASE("annotation round trip") {
  dt::DatasetSpec spec;
  std::vector<dt::Scene> scenes{dt::generate_scene(spec, 1), dt::generate_scene(spec, 2), dt::generate_scene(spec, 3)};
  scenes[1].instances[0].visible[2] = false;
  for (auto storage : {dt::ImageStorage::RawFile, dt::ImageStorage::Embedded}) {
    auto dir = scratch("rt");
    dt::write_annotations(scenes, {3, {"head", "torso", "rump"}}, dir / "a.json", storage);
    auto back = dt::read_annotations(dir / "a.json");
    CHECK(back.meta.parts == 3);
    CHECK(back.meta.part_names == std::vector<std::string>{"head", "torso", "rump"});
    REQUIRE(back.scenes.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(same_scene(back.scenes[i], scenes[i]));
    CHECK(back.scores.empty());
    fs::remove_all(dir);
  }
}

TEST_CASE("dataset round trip") {
  dt::DatasetSpec spec;
  spec.n_pool = 4;
  spec.n_labeled = 2;
  spec.n_unlabeled = 2;
  spec.n_test = 2;
  auto ds = dt::generate_dataset(spec);
  auto dir = scratch("ds");
  dt::write_dataset(ds, dir);
  auto back = dt::read_dataset(dir);
  CHECK(nlohmann::json(back.spec) == nlohmann::json(ds.spec));
  REQUIRE(back.pool.size() == 4);
  REQUIRE(back.unlabeled.size() == 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(same_scene(back.pool[i], ds.pool[i]));
  CHECK(back.unlabeled[1].id == ds.unlabeled[1].id);
  fs::remove_all(dir);
}

TEST_CASE("annotation validation names the record") {
  auto dir = scratch("bad");
  write_json(dir / "short.json", tiny_file({1, 1, 2, 2, 2}));
  try {
    dt::read_annotations(dir / "short.json");
    FAIL("expected an error");
  } catch (const dt::AnnotationError& e) {
    CHECK(std::string(e.what()).find("instance_id 42") != std::string::npos);
  }
  write_json(dir / "outside.json", tiny_file({1, 1, 2, 9, 1, 2}));
  CHECK_THROWS_WITH_AS(dt::read_annotations(dir / "outside.json"), doctest::Contains("instance_id 42"), dt::AnnotationError);
  // An invisible keypoint may lie anywhere.
  write_json(dir / "hidden.json", tiny_file({1, 1, 2, 9, 1, 0}));
  CHECK_NOTHROW(dt::read_annotations(dir / "hidden.json"));
  write_json(dir / "orphan.json", [] {
    auto j = tiny_file({1, 1, 1, 2, 2, 1});
    j["annotations"][0]["image_id"] = 8;
    return j;
  }());
  CHECK_THROWS_AS(dt::read_annotations(dir / "orphan.json"), dt::AnnotationError);
  std::ofstream(dir / "broken.json") << "{\"meta\": ";
  CHECK_THROWS_AS(dt::read_annotations(dir / "broken.json"), dt::AnnotationError);
  CHECK_THROWS_AS(dt::read_annotations(dir / "missing.json"), dt::AnnotationError);
  fs::remove_all(dir);
}

TEST_CASE("invisible keypoints survive the file but not target construction") {
  auto dir = scratch("vis");
  write_json(dir / "v.json", tiny_file({1, 1, 1, 3, 4, 0}));
  auto f = dt::read_annotations(dir / "v.json");
  REQUIRE(f.scenes[0].instances.size() == 1);
  const auto& inst = f.scenes[0].instances[0];
  CHECK(inst.keypoints[1] == smp::Point{3, 4});
  CHECK_FALSE(inst.visible[1]);
  auto g = smp::targets::build_keypoint_target(f.scenes[0].instances, 4, 5, 2, 0);
  Real part1 = 0;
  for (std::int64_t i = 1; i < g.size(); i += 2) part1 += g[i];
  CHECK(part1 == 0);
  CHECK(g[(1 * 5 + 1) * 2] == 1);
  fs::remove_all(dir);
}
