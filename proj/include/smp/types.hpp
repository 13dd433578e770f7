#pragma once

#include <cstdint>
#include <vector>

#include "smp/tensor.hpp"

namespace smp {

/// (row, col), zero-based. Grid units inside targets/fusion, pixels in data files.
struct Point {
  Real row = 0;
  Real col = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// One animal: K ordered keypoints with visibility flags.
struct Instance {
  std::vector<Point> keypoints;
  std::vector<bool> visible;

  std::size_t num_parts() const { return keypoints.size(); }
  std::size_t num_visible() const;
  /// Copy with every coordinate multiplied by `factor`.
  Instance scaled(Real factor) const;
  Instance translated(Real d_row, Real d_col) const;
  friend bool operator==(const Instance&, const Instance&) = default;
};

/// Instance with all K parts visible.
Instance make_instance(std::vector<Point> keypoints);

struct Box {
  Real row_min = 0, col_min = 0, row_max = 0, col_max = 0;
  Real height() const { return row_max - row_min; }
  Real width() const { return col_max - col_min; }
  Real area() const { return height() * width(); }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Grid cell of part `part`.
struct CellIndex {
  std::int64_t row = 0, col = 0, part = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// Pseudo keypoints of one frame: selected cells s, their box confidences v
/// (no gradient) and the decoded coordinates y, a [T,2] tensor that stays
/// differentiable with respect to the vector-field output it came from.
/// `coords` is meaningful only when `indices` is non-empty.
struct PseudoLabels {
  std::vector<CellIndex> indices;
  std::vector<Real> confidences;
  Tensor coords;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  Point coord(std::size_t t) const { return {coords[2 * t], coords[2 * t + 1]}; }
};

/// Decoded instances of one frame, scores sorted descending.
struct Prediction {
  std::vector<Instance> instances;
  std::vector<Real> scores;
};

}  // namespace smp
