#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "smp/types.hpp"

// Pseudo keypoints from the box branch (where) and the vector-field branch
// (what), the single-instance soft-argmax readout, and instance decoding.
namespace smp::fusion {

struct Selection {
  std::vector<CellIndex> indices;
  std::vector<Real> confidences;
};

/// Every (i,j,k) with sigmoid(B[i,j,k]) > delta, in row-major order, with the
/// sigmoid values as confidences. Reads values only; nothing is taped.
Selection threshold_boxes(const Tensor& box_logits, Real delta);

/// y[t] = D[s_t] + M[s_t.row, s_t.col] as a [T,2] tensor, differentiable in D.
/// Throws ShapeError for an out-of-range index or an empty selection.
Tensor decode_coords(const Tensor& vectors, const Tensor& grid, std::span<const CellIndex> indices);

/// threshold_boxes followed by decode_coords on one frame ([H,W,K], [H,W,K,2]).
PseudoLabels extract_pseudo_labels(const Tensor& box_logits, const Tensor& vectors, const Tensor& grid,
                                   Real delta);

/// Expected grid coordinate under softmax2d of an [H,W] map.
std::pair<Tensor, Tensor> soft_argmax(const Tensor& heatmap);

struct DecodeParams {
  Real delta = 0.05;
  /// Skeletons closer than this (mean per-part distance, grid cells) are duplicates.
  Real nms_radius = 2.0;
  /// Anchors whose skeletons agree part-by-part within this radius vote together.
  Real vote_radius = 1.0;
  std::int64_t top_n = 100;
};

/// Decodes one frame ([H,W,K] box logits, [H,W,K,2] vectors) into instances in
/// grid units.
///
/// Every cell whose mean-over-parts sigmoid(B) exceeds delta is an anchor and
/// proposes the skeleton {cell + D[cell,k]}. An anchor's vote mass is the sum of
/// anchor scores over all anchors whose skeletons agree with it on every part
/// within vote_radius; the instance score is mass / (1 + mass). Greedy
/// suppression (highest score first, ties to the lowest linear index) drops
/// skeletons within nms_radius of a kept one. At most top_n instances.
Prediction decode_instances(const Tensor& box_logits, const Tensor& vectors, const DecodeParams& params);

/// Mean per-part Euclidean distance between two skeletons with equal K.
Real skeleton_distance(const Instance& a, const Instance& b);

}  // namespace smp::fusion
