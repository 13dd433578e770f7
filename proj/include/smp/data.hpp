#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smp/types.hpp"

// Synthetic multi-instance scenes, crop-and-overlay augmentation, annotation
// files and labeled/unlabeled splits. Coordinates here are in pixels.
namespace smp::data {

struct AnnotationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Annotated frame. `image` is [H,W,C] with values in [0,1].
struct Scene {
  std::int64_t id = 0;
  Tensor image;
  std::vector<Instance> instances;
};

/// Frame without annotations; there is no way to attach instances to it.
struct UnlabeledScene {
  std::int64_t id = 0;
  Tensor image;
};

UnlabeledScene strip(const Scene& scene);

struct DatasetSpec {
  std::int64_t n_pool = 45;       // annotated training frames to draw labeled subsets from
  std::int64_t n_labeled = 5;     // default labeled subset size
  std::int64_t n_unlabeled = 0;   // dedicated unlabeled frames, shared by every subset
  std::int64_t n_test = 20;
  std::int64_t parts = 3;
  std::vector<std::string> part_names{"head", "torso", "rump"};
  std::int64_t image_height = 64;
  std::int64_t image_width = 64;
  std::int64_t channels = 1;
  std::int64_t min_instances = 1;
  std::int64_t max_instances = 4;
  Real scale_min = 14;  // head-to-rump length, pixels
  Real scale_max = 22;
  Real keypoint_margin = 3;          // minimum distance of a keypoint from the border
  Real min_keypoint_separation = 8;  // between keypoints of different instances; sets the overlap allowed
  Real annotation_jitter = 0;        // std-dev of annotation noise, pixels
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

/// Deterministic in (spec, scene_seed). Instance count uniform in
/// [min_instances, max_instances]; each instance is a K-part chain with random
/// position, rotation and length rendered as soft blobs over textured noise.
Scene generate_scene(const DatasetSpec& spec, std::uint64_t scene_seed);

struct Crop {
  Tensor image;       // [h,w,C]
  Tensor alpha;       // [h,w], feathered towards the crop border
  Instance instance;  // crop coordinates
};

/// Crops around every fully visible instance, `margin` pixels beyond its keypoints.
std::vector<Crop> extract_crops(const Scene& scene, std::int64_t margin = 6);

/// Alpha-blends `crop` into `scene` at an integer offset and appends the
/// translated instance. Throws std::invalid_argument if the crop does not fit.
Scene paste_crop(Scene scene, const Crop& crop, std::int64_t row_offset, std::int64_t col_offset);

/// Pastes n crops at random non-clipping positions on `background` ([H,W,C]).
/// Crops are drawn without replacement while the pool lasts.
Scene overlay_augment(std::span<const Crop> crops, const Tensor& background, std::int64_t n, std::uint64_t seed);

/// Annotated pool, dedicated unlabeled frames and test frames for one spec.
struct Dataset {
  DatasetSpec spec;
  std::vector<Scene> pool;
  std::vector<UnlabeledScene> unlabeled;
  std::vector<Scene> test;
};

Dataset generate_dataset(const DatasetSpec& spec);

struct Splits {
  std::vector<Scene> labeled;
  std::vector<UnlabeledScene> unlabeled;  // stripped pool leftovers, then dedicated frames
  std::vector<Scene> test;
};

/// n_labeled pool frames chosen by seed; the rest of the pool is stripped into
/// the unlabeled set. Throws std::invalid_argument if the pool is too small.
Splits make_splits(const Dataset& dataset, std::int64_t n_labeled, std::uint64_t seed);

enum class ImageStorage { RawFile, Embedded };

struct AnnotationMeta {
  std::int64_t parts = 0;
  std::vector<std::string> part_names;
};

struct AnnotationFile {
  AnnotationMeta meta;
  std::vector<Scene> scenes;
  std::vector<std::vector<Real>> scores;  // per scene, per instance; empty without "score" fields
};

/// JSON {"images":[{id,file|pixels,height,width,channels}],
///       "annotations":[{image_id,instance_id,keypoints:[row,col,visible]*K[,score]}],
///       "meta":{K,skeleton}}.
/// Raw image files hold little-endian doubles, row-major [H,W,C], next to `path`.
void write_annotations(std::span<const Scene> scenes, const AnnotationMeta& meta, const std::filesystem::path& path,
                       ImageStorage storage = ImageStorage::RawFile,
                       std::span<const std::vector<Real>> scores = {});
AnnotationFile read_annotations(const std::filesystem::path& path);

/// Writes pool/unlabeled/test annotation files plus manifest.json into `dir`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                   ImageStorage storage = ImageStorage::RawFile);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace smp::data
