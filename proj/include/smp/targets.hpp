#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "smp/types.hpp"

// Supervision tensors built from keypoint annotations. All coordinates are in
// output-grid units; every function here is pure.
namespace smp::targets {

inline constexpr std::int64_t kDefaultWindowHalfwidth = 1;

/// Nearest integer, exact halves rounded toward negative infinity.
std::int64_t round_to_cell(Real x);

/// M[i,j] = (i, j), shape [H,W,2].
Tensor grid_coordinates(std::int64_t height, std::int64_t width);

/// Binary [H,W,K] map: a (2w+1)^2 window of ones around each visible keypoint
/// of part k (rounded, clipped at the borders), merged by OR.
Tensor build_keypoint_target(std::span<const Instance> instances, std::int64_t height, std::int64_t width,
                             std::int64_t parts, std::int64_t window_halfwidth = kDefaultWindowHalfwidth);

/// Tight box over visible keypoints, grown by `margin` and clamped to the grid.
/// Throws std::invalid_argument when no keypoint is visible.
Box pseudo_box(const Instance& instance, std::int64_t height, std::int64_t width, Real margin = 0);

/// Binary [H,W,K]: each instance's pseudo box rasterized (rounded corners,
/// inclusive) and replicated identically over the K channels.
Tensor build_box_target(std::span<const Instance> instances, std::int64_t height, std::int64_t width,
                        std::int64_t parts, Real margin = 0);

struct VectorField {
  Tensor offsets;                   // [H,W,K,2]
  std::vector<bool> part_present;   // false: no visible keypoint of that part, offsets are 0
};

/// P[g,k] = nearest visible part-k keypoint (over all instances) minus g.
/// Equidistant keypoints resolve to the earlier instance in list order.
VectorField build_vector_field(std::span<const Instance> instances, std::int64_t height, std::int64_t width,
                               std::int64_t parts);

struct PseudoTarget {
  Tensor target;   // [H,W,K] binary windows around rounded pseudo keypoints
  Tensor weights;  // [H,W,K] confidence on positive cells (max over owners), 1 elsewhere
  /// Per-cell score fed to the v-weighted focal loss: target * weights.
  Tensor scores() const;
};

/// Windows as in build_keypoint_target around each pseudo coordinate (rounded,
/// clamped into the grid). Throws std::invalid_argument if any v is outside [0,1].
PseudoTarget build_pseudo_target(const PseudoLabels& pseudo, std::int64_t height, std::int64_t width,
                                 std::int64_t parts, std::int64_t window_halfwidth = kDefaultWindowHalfwidth);

/// Differentiable variant of the score map for a batch of frames, [N,H,W,K]:
/// score(c,k) = max_t v_t * prod_d clamp(w + 1 - |c_d - y_t,d|, 0, 1) over
/// pseudo keypoints t of part k. Agrees with build_pseudo_target().scores() for
/// integral coordinates; gradients reach each frame's coords tensor.
Tensor soft_pseudo_scores(std::span<const PseudoLabels> frames, std::int64_t height, std::int64_t width,
                          std::int64_t parts, std::int64_t window_halfwidth = kDefaultWindowHalfwidth);

/// Supervision for a batch of labeled frames.
struct TargetMaps {
  Tensor keypoints;  // G [N,H,W,K]
  Tensor boxes;      // U [N,H,W,K]
  Tensor vectors;    // P [N,H,W,K,2]
};

TargetMaps build_targets(std::span<const std::vector<Instance>> frames, std::int64_t height, std::int64_t width,
                         std::int64_t parts, std::int64_t window_halfwidth = kDefaultWindowHalfwidth);

}  // namespace smp::targets
