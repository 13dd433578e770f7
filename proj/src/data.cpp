#include "smp/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace smp::data {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e5f5ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct PartStyle {
  Real sigma;
  Real intensity;
};

PartStyle part_style(std::int64_t k, std::int64_t parts) {
  const Real t = parts > 1 ? static_cast<Real>(k) / static_cast<Real>(parts - 1) : 0;
  // Head small and bright, tail broader and dimmer.
  return {Real(1.5) + Real(0.9) * std::sin(std::numbers::pi * t * 0.75), Real(0.95) - Real(0.45) * t};
}

Real uniform(std::mt19937_64& rng, Real lo, Real hi) { return std::uniform_real_distribution<Real>(lo, hi)(rng); }

}  // namespace

UnlabeledScene strip(const Scene& scene) { return {scene.id, scene.image}; }

void DatasetSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("dataset spec: " + m); };
  if (n_pool < 0 || n_labeled < 0 || n_unlabeled < 0 || n_test < 0) fail("counts must be >= 0");
  if (n_labeled > n_pool) fail("n_labeled exceeds n_pool");
  if (parts < 1) fail("parts must be >= 1");
  if (!part_names.empty() && static_cast<std::int64_t>(part_names.size()) != parts) fail("part_names size != parts");
  if (image_height < 1 || image_width < 1 || channels < 1) fail("image extents must be >= 1");
  if (min_instances < 1 || max_instances < min_instances) fail("instance range invalid");
  if (!(scale_min > 0) || scale_max < scale_min) fail("scale range invalid");
  if (keypoint_margin < 0 || min_keypoint_separation < 0 || annotation_jitter < 0) fail("negative distance");
  if (scale_min + 2 * keypoint_margin >= static_cast<Real>(std::min(image_height, image_width))) {
    fail("template does not fit the image at the minimum scale");
  }
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = {{"n_pool", s.n_pool},
       {"n_labeled", s.n_labeled},
       {"n_unlabeled", s.n_unlabeled},
       {"n_test", s.n_test},
       {"parts", s.parts},
       {"part_names", s.part_names},
       {"image_height", s.image_height},
       {"image_width", s.image_width},
       {"channels", s.channels},
       {"min_instances", s.min_instances},
       {"max_instances", s.max_instances},
       {"scale_min", s.scale_min},
       {"scale_max", s.scale_max},
       {"keypoint_margin", s.keypoint_margin},
       {"min_keypoint_separation", s.min_keypoint_separation},
       {"annotation_jitter", s.annotation_jitter},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  DatasetSpec d;
  s.n_pool = j.value("n_pool", d.n_pool);
  s.n_labeled = j.value("n_labeled", d.n_labeled);
  s.n_unlabeled = j.value("n_unlabeled", d.n_unlabeled);
  s.n_test = j.value("n_test", d.n_test);
  s.parts = j.value("parts", d.parts);
  if (j.contains("part_names")) {
    s.part_names = j.at("part_names").get<std::vector<std::string>>();
  } else if (s.parts == d.parts) {
    s.part_names = d.part_names;
  } else {
    s.part_names.clear();
    for (std::int64_t k = 0; k < s.parts; ++k) s.part_names.push_back("part" + std::to_string(k));
  }
  s.image_height = j.value("image_height", d.image_height);
  s.image_width = j.value("image_width", d.image_width);
  s.channels = j.value("channels", d.channels);
  s.min_instances = j.value("min_instances", d.min_instances);
  s.max_instances = j.value("max_instances", d.max_instances);
  s.scale_min = j.value("scale_min", d.scale_min);
  s.scale_max = j.value("scale_max", d.scale_max);
  s.keypoint_margin = j.value("keypoint_margin", d.keypoint_margin);
  s.min_keypoint_separation = j.value("min_keypoint_separation", d.min_keypoint_separation);
  s.annotation_jitter = j.value("annotation_jitter", d.annotation_jitter);
  s.seed = j.value("seed", d.seed);
}

Scene generate_scene(const DatasetSpec& spec, std::uint64_t scene_seed) {
  spec.validate();
  const auto h = spec.image_height, w = spec.image_width, ch = spec.channels, parts = spec.parts;
  std::mt19937_64 rng(mix_seed(spec.seed, scene_seed));
  const auto count =
      std::uniform_int_distribution<std::int64_t>(spec.min_instances, spec.max_instances)(rng);

  const Real fit = static_cast<Real>(std::min(h, w)) - 1 - 2 * spec.keypoint_margin;
  std::vector<Instance> instances;
  for (int restart = 0;; ++restart) {
    if (restart > 200) throw std::invalid_argument("generate_scene: cannot place instances under the spec");
    instances.clear();
    bool ok = true;
    for (std::int64_t i = 0; i < count && ok; ++i) {
      ok = false;
      for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        const Real length = std::min(uniform(rng, spec.scale_min, spec.scale_max), fit);
        const Real theta = uniform(rng, 0, 2 * std::numbers::pi);
        const Real ur = std::sin(theta), uc = std::cos(theta);
        const Real nr = uc, nc = -ur;
        std::vector<Point> rel;
        for (std::int64_t k = 0; k < parts; ++k) {
          const Real t = parts > 1 ? length * (Real(0.5) - static_cast<Real>(k) / static_cast<Real>(parts - 1)) : 0;
          // Bend interior parts sideways so the pseudo box never collapses to a line.
          const Real e = (parts >= 3 && k % 2 == 1 && k + 1 < parts) ? Real(0.2) * length : 0;
          rel.push_back({t * ur + e * nr, t * uc + e * nc});
        }
        Real rmin = 0, rmax = 0, cmin = 0, cmax = 0;
        for (const auto& p : rel) {
          rmin = std::min(rmin, p.row), rmax = std::max(rmax, p.row);
          cmin = std::min(cmin, p.col), cmax = std::max(cmax, p.col);
        }
        const Real lo_r = spec.keypoint_margin - rmin, hi_r = static_cast<Real>(h - 1) - spec.keypoint_margin - rmax;
        const Real lo_c = spec.keypoint_margin - cmin, hi_c = static_cast<Real>(w - 1) - spec.keypoint_margin - cmax;
        if (hi_r < lo_r || hi_c < lo_c) continue;
        const Real cr = uniform(rng, lo_r, hi_r), cc = uniform(rng, lo_c, hi_c);
        std::vector<Point> kps;
        for (const auto& p : rel) kps.push_back({cr + p.row, cc + p.col});
        bool clear = true;
        for (const auto& other : instances)
          for (const auto& q : other.keypoints)
            for (const auto& p : kps)
              if (std::hypot(p.row - q.row, p.col - q.col) < spec.min_keypoint_separation) clear = false;
        if (!clear) continue;
        instances.push_back(make_instance(std::move(kps)));
        ok = true;
      }
    }
    if (ok) break;
  }

  // Background: low-frequency waves plus pixel noise.
  std::vector<Real> img(static_cast<std::size_t>(h * w * ch));
  Real wave_f[3], wave_a[3], wave_p[3];
  for (int m = 0; m < 3; ++m) {
    wave_f[m] = uniform(rng, 0.08, 0.35);
    wave_a[m] = uniform(rng, 0, 2 * std::numbers::pi);
    wave_p[m] = uniform(rng, 0, 2 * std::numbers::pi);
  }
  std::vector<Real> gray(static_cast<std::size_t>(h * w));
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      Real v = 0;
      for (int m = 0; m < 3; ++m)
        v += std::sin(wave_f[m] * (static_cast<Real>(r) * std::cos(wave_a[m]) + static_cast<Real>(c) * std::sin(wave_a[m])) +
                      wave_p[m]);
      gray[static_cast<std::size_t>(r * w + c)] = Real(0.18) + Real(0.06) * v / 3 + uniform(rng, -0.06, 0.06);
    }
  for (const auto& inst : instances) {
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t c = 0; c < w; ++c) {
        Real v = 0;
        for (std::int64_t k = 0; k < parts; ++k) {
          const auto style = part_style(k, parts);
          const Real dr = static_cast<Real>(r) - inst.keypoints[k].row, dc = static_cast<Real>(c) - inst.keypoints[k].col;
          v = std::max(v, style.intensity * std::exp(-(dr * dr + dc * dc) / (2 * style.sigma * style.sigma)));
        }
        auto& px = gray[static_cast<std::size_t>(r * w + c)];
        px = std::max(px, v);
      }
  }
  for (std::int64_t i = 0; i < h * w; ++i)
    for (std::int64_t c = 0; c < ch; ++c) {
      const Real tint = ch == 1 ? Real(1) : Real(1) - Real(0.1) * static_cast<Real>(c);
      img[static_cast<std::size_t>(i * ch + c)] = std::clamp(gray[static_cast<std::size_t>(i)] * tint, Real(0), Real(1));
    }

  if (spec.annotation_jitter > 0) {
    std::normal_distribution<Real> noise(0, spec.annotation_jitter);
    for (auto& inst : instances)
      for (auto& p : inst.keypoints) {
        p.row = std::clamp(p.row + noise(rng), Real(0), static_cast<Real>(h - 1));
        p.col = std::clamp(p.col + noise(rng), Real(0), static_cast<Real>(w - 1));
      }
  }
  return {static_cast<std::int64_t>(scene_seed), Tensor({h, w, ch}, std::move(img)), std::move(instances)};
}

std::vector<Crop> extract_crops(const Scene& scene, std::int64_t margin) {
  const auto h = scene.image.dim(0), w = scene.image.dim(1), ch = scene.image.dim(2);
  std::vector<Crop> crops;
  for (const auto& inst : scene.instances) {
    if (inst.num_visible() != inst.num_parts() || inst.keypoints.empty()) continue;
    Real rmin = inst.keypoints[0].row, rmax = rmin, cmin = inst.keypoints[0].col, cmax = cmin;
    for (const auto& p : inst.keypoints) {
      rmin = std::min(rmin, p.row), rmax = std::max(rmax, p.row);
      cmin = std::min(cmin, p.col), cmax = std::max(cmax, p.col);
    }
    const auto r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(rmin)) - margin);
    const auto r1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(rmax)) + margin);
    const auto c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cmin)) - margin);
    const auto c1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(cmax)) + margin);
    const auto ch_ = r1 - r0 + 1, cw = c1 - c0 + 1;
    std::vector<Real> pixels, alpha;
    const Real feather = 3;
    for (std::int64_t r = 0; r < ch_; ++r)
      for (std::int64_t c = 0; c < cw; ++c) {
        for (std::int64_t k = 0; k < ch; ++k)
          pixels.push_back(scene.image[((r0 + r) * w + (c0 + c)) * ch + k]);
        const auto edge = std::min({r, c, ch_ - 1 - r, cw - 1 - c});
        alpha.push_back(std::min(Real(1), static_cast<Real>(edge + 1) / feather));
      }
    crops.push_back({Tensor({ch_, cw, ch}, std::move(pixels)), Tensor({ch_, cw}, std::move(alpha)),
                     inst.translated(-static_cast<Real>(r0), -static_cast<Real>(c0))});
  }
  return crops;
}

Scene paste_crop(Scene scene, const Crop& crop, std::int64_t row_offset, std::int64_t col_offset) {
  const auto h = scene.image.dim(0), w = scene.image.dim(1), ch = scene.image.dim(2);
  const auto chh = crop.image.dim(0), cw = crop.image.dim(1);
  if (crop.image.dim(2) != ch) throw std::invalid_argument("paste_crop: channel mismatch");
  if (chh > h || cw > w) throw std::invalid_argument("paste_crop: crop larger than background");
  if (row_offset < 0 || col_offset < 0 || row_offset + chh > h || col_offset + cw > w) {
    throw std::invalid_argument("paste_crop: crop does not fit at the requested offset");
  }
  std::vector<Real> img(scene.image.data().begin(), scene.image.data().end());
  for (std::int64_t r = 0; r < chh; ++r)
    for (std::int64_t c = 0; c < cw; ++c) {
      const Real a = crop.alpha[r * cw + c];
      for (std::int64_t k = 0; k < ch; ++k) {
        auto& px = img[static_cast<std::size_t>(((row_offset + r) * w + (col_offset + c)) * ch + k)];
        px = a * crop.image[(r * cw + c) * ch + k] + (1 - a) * px;
      }
    }
  scene.image = Tensor(scene.image.shape(), std::move(img));
  scene.instances.push_back(crop.instance.translated(static_cast<Real>(row_offset), static_cast<Real>(col_offset)));
  return scene;
}

Scene overlay_augment(std::span<const Crop> crops, const Tensor& background, std::int64_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("overlay_augment: n must be >= 1");
  if (crops.empty()) throw std::invalid_argument("overlay_augment: no crops");
  if (background.rank() != 3) throw ShapeError("overlay_augment: background must be [H,W,C]");
  std::mt19937_64 rng(mix_seed(seed, 0x6f7665726c6179ULL));
  std::vector<std::size_t> bag;
  Scene scene{static_cast<std::int64_t>(seed), background, {}};
  for (std::int64_t i = 0; i < n; ++i) {
    if (bag.empty()) {
      for (std::size_t c = 0; c < crops.size(); ++c) bag.push_back(c);
      std::shuffle(bag.begin(), bag.end(), rng);
    }
    const Crop& crop = crops[bag.back()];
    bag.pop_back();
    if (crop.image.dim(0) > background.dim(0) || crop.image.dim(1) > background.dim(1)) {
      throw std::invalid_argument("overlay_augment: crop larger than background");
    }
    const auto r = std::uniform_int_distribution<std::int64_t>(0, background.dim(0) - crop.image.dim(0))(rng);
    const auto c = std::uniform_int_distribution<std::int64_t>(0, background.dim(1) - crop.image.dim(1))(rng);
    scene = paste_crop(std::move(scene), crop, r, c);
  }
  return scene;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds{spec, {}, {}, {}};
  std::uint64_t id = 0;
  for (std::int64_t i = 0; i < spec.n_pool; ++i) ds.pool.push_back(generate_scene(spec, id++));
  for (std::int64_t i = 0; i < spec.n_unlabeled; ++i) ds.unlabeled.push_back(strip(generate_scene(spec, id++)));
  for (std::int64_t i = 0; i < spec.n_test; ++i) ds.test.push_back(generate_scene(spec, id++));
  return ds;
}

Splits make_splits(const Dataset& dataset, std::int64_t n_labeled, std::uint64_t seed) {
  if (n_labeled < 1) throw std::invalid_argument("make_splits: n_labeled must be >= 1");
  if (n_labeled > static_cast<std::int64_t>(dataset.pool.size())) {
    throw std::invalid_argument("make_splits: insufficient scenes: need " + std::to_string(n_labeled) +
                                " labeled, pool has " + std::to_string(dataset.pool.size()));
  }
  std::vector<std::size_t> order(dataset.pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(seed, 0x73706c6974ULL));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> chosen(order.begin(), order.begin() + n_labeled);
  std::sort(chosen.begin(), chosen.end());
  std::vector<bool> taken(order.size(), false);
  for (auto i : chosen) taken[i] = true;

  Splits s;
  for (auto i : chosen) s.labeled.push_back(dataset.pool[i]);
  for (std::size_t i = 0; i < dataset.pool.size(); ++i)
    if (!taken[i]) s.unlabeled.push_back(strip(dataset.pool[i]));
  s.unlabeled.insert(s.unlabeled.end(), dataset.unlabeled.begin(), dataset.unlabeled.end());
  s.test = dataset.test;
  return s;
}

namespace {

std::string image_file_name(std::int64_t id) {
  std::ostringstream os;
  os << "images/" << id << ".f64";
  return os.str();
}

void write_raw_image(const Tensor& image, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write image " + path.string());
  for (double v : image.data()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

Tensor read_raw_image(const std::filesystem::path& path, const Shape& shape) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw AnnotationError("cannot open image file " + path.string());
  std::vector<Real> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      const int c = is.get();
      if (c == EOF) throw AnnotationError("image file truncated: " + path.string());
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    v = static_cast<Real>(std::bit_cast<double>(bits));
  }
  return Tensor(shape, std::move(data));
}

}  // namespace

void write_annotations(std::span<const Scene> scenes, const AnnotationMeta& meta, const std::filesystem::path& path,
                       ImageStorage storage, std::span<const std::vector<Real>> scores) {
  if (!scores.empty() && scores.size() != scenes.size()) {
    throw std::invalid_argument("write_annotations: scores must align with scenes");
  }
  nlohmann::json doc;
  doc["meta"] = {{"K", meta.parts}, {"skeleton", meta.part_names}};
  doc["images"] = nlohmann::json::array();
  doc["annotations"] = nlohmann::json::array();
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::int64_t instance_id = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& scene = scenes[s];
    nlohmann::json img = {{"id", scene.id},
                          {"height", scene.image.dim(0)},
                          {"width", scene.image.dim(1)},
                          {"channels", scene.image.dim(2)}};
    if (storage == ImageStorage::Embedded) {
      img["pixels"] = std::vector<Real>(scene.image.data().begin(), scene.image.data().end());
    } else {
      const auto file = image_file_name(scene.id);
      write_raw_image(scene.image, dir / file);
      img["file"] = file;
    }
    doc["images"].push_back(std::move(img));
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
      const auto& inst = scene.instances[i];
      nlohmann::json kps = nlohmann::json::array();
      for (std::size_t k = 0; k < inst.keypoints.size(); ++k) {
        kps.push_back(inst.keypoints[k].row);
        kps.push_back(inst.keypoints[k].col);
        kps.push_back(inst.visible[k] ? 1 : 0);
      }
      nlohmann::json ann = {{"image_id", scene.id}, {"instance_id", instance_id++}, {"keypoints", std::move(kps)}};
      if (!scores.empty()) ann["score"] = scores[s].at(i);
      doc["annotations"].push_back(std::move(ann));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write annotations " + path.string());
  os << doc.dump(1) << '\n';
}

AnnotationFile read_annotations(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw AnnotationError("cannot open annotation file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw AnnotationError("malformed annotation JSON in " + path.string() + ": " + e.what());
  }
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  AnnotationFile out;
  try {
    out.meta.parts = doc.at("meta").at("K").get<std::int64_t>();
    out.meta.part_names = doc.at("meta").value("skeleton", std::vector<std::string>{});
    if (out.meta.parts < 1) throw AnnotationError("meta.K must be >= 1");

    std::vector<std::int64_t> order;
    std::vector<Scene> scenes;
    for (const auto& img : doc.at("images")) {
      Scene scene;
      scene.id = img.at("id").get<std::int64_t>();
      const Shape shape{img.at("height").get<std::int64_t>(), img.at("width").get<std::int64_t>(),
                        img.value("channels", std::int64_t{1})};
      if (img.contains("pixels")) {
        auto px = img.at("pixels").get<std::vector<Real>>();
        if (static_cast<std::int64_t>(px.size()) != numel(shape)) {
          throw AnnotationError("image " + std::to_string(scene.id) + ": pixel count does not match extents");
        }
        scene.image = Tensor(shape, std::move(px));
      } else {
        scene.image = read_raw_image(dir / img.at("file").get<std::string>(), shape);
      }
      scenes.push_back(std::move(scene));
    }
    out.scores.assign(scenes.size(), {});
    bool any_score = false;
    for (const auto& ann : doc.at("annotations")) {
      const auto iid = ann.at("instance_id").get<std::int64_t>();
      const auto image_id = ann.at("image_id").get<std::int64_t>();
      auto it = std::find_if(scenes.begin(), scenes.end(), [&](const Scene& s) { return s.id == image_id; });
      if (it == scenes.end()) {
        throw AnnotationError("annotation instance_id " + std::to_string(iid) + " refers to unknown image_id " +
                              std::to_string(image_id));
      }
      const auto flat = ann.at("keypoints").get<std::vector<Real>>();
      if (static_cast<std::int64_t>(flat.size()) != 3 * out.meta.parts) {
        throw AnnotationError("annotation instance_id " + std::to_string(iid) + " has " +
                              std::to_string(flat.size() / 3) + " keypoints, meta.K is " +
                              std::to_string(out.meta.parts));
      }
      Instance inst;
      const Real hmax = static_cast<Real>(it->image.dim(0) - 1), wmax = static_cast<Real>(it->image.dim(1) - 1);
      for (std::int64_t k = 0; k < out.meta.parts; ++k) {
        const Point p{flat[3 * k], flat[3 * k + 1]};
        const bool vis = flat[3 * k + 2] != 0;
        if (vis && (p.row < 0 || p.row > hmax || p.col < 0 || p.col > wmax)) {
          throw AnnotationError("annotation instance_id " + std::to_string(iid) + ": keypoint " + std::to_string(k) +
                                " lies outside image " + std::to_string(image_id));
        }
        inst.keypoints.push_back(p);
        inst.visible.push_back(vis);
      }
      it->instances.push_back(std::move(inst));
      auto& sc = out.scores[static_cast<std::size_t>(it - scenes.begin())];
      if (ann.contains("score")) {
        any_score = true;
        sc.push_back(ann.at("score").get<Real>());
      } else {
        sc.push_back(0);
      }
    }
    if (!any_score) out.scores.clear();
    out.scenes = std::move(scenes);
  } catch (const nlohmann::json::exception& e) {
    throw AnnotationError("invalid annotation file " + path.string() + ": " + e.what());
  }
  return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir, ImageStorage storage) {
  std::filesystem::create_directories(dir);
  const AnnotationMeta meta{dataset.spec.parts, dataset.spec.part_names};
  write_annotations(dataset.pool, meta, dir / "pool.json", storage);
  std::vector<Scene> unlabeled;
  for (const auto& u : dataset.unlabeled) unlabeled.push_back({u.id, u.image, {}});
  write_annotations(unlabeled, meta, dir / "unlabeled.json", storage);
  write_annotations(dataset.test, meta, dir / "test.json", storage);
  auto ids = [](const auto& scenes) {
    std::vector<std::int64_t> out;
    for (const auto& s : scenes) out.push_back(s.id);
    return out;
  };
  nlohmann::json manifest = {{"spec", dataset.spec},
                             {"pool", "pool.json"},
                             {"unlabeled", "unlabeled.json"},
                             {"test", "test.json"},
                             {"pool_ids", ids(dataset.pool)},
                             {"unlabeled_ids", ids(dataset.unlabeled)},
                             {"test_ids", ids(dataset.test)}};
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw AnnotationError("missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw AnnotationError(std::string("malformed manifest: ") + e.what());
  }
  Dataset ds;
  ds.spec = manifest.at("spec").get<DatasetSpec>();
  auto pool = read_annotations(dir / manifest.value("pool", std::string("pool.json")));
  auto unl = read_annotations(dir / manifest.value("unlabeled", std::string("unlabeled.json")));
  auto test = read_annotations(dir / manifest.value("test", std::string("test.json")));
  if (pool.meta.parts != ds.spec.parts || test.meta.parts != ds.spec.parts) {
    throw AnnotationError("annotation K does not match dataset spec");
  }
  ds.pool = std::move(pool.scenes);
  for (const auto& s : unl.scenes) ds.unlabeled.push_back(strip(s));
  ds.test = std::move(test.scenes);
  return ds;
}

}  // namespace smp::data
