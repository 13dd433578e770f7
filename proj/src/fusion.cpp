#include "smp/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "smp/ops.hpp"
#include "smp/targets.hpp"

namespace smp::fusion {

namespace {

Real sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

void expect_rank(const Tensor& t, std::int64_t rank, const char* what) {
  if (t.rank() != rank) throw ShapeError(std::string(what) + " has shape " + to_string(t.shape()));
}

}  // namespace

Selection threshold_boxes(const Tensor& box_logits, Real delta) {
  expect_rank(box_logits, 3, "threshold_boxes: box logits");
  if (!(delta > 0 && delta < 1)) throw std::invalid_argument("threshold delta must lie in (0,1)");
  const auto h = box_logits.dim(0), w = box_logits.dim(1), parts = box_logits.dim(2);
  Selection sel;
  auto b = box_logits.data();
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c)
      for (std::int64_t k = 0; k < parts; ++k) {
        const Real p = sigmoid(b[static_cast<std::size_t>((r * w + c) * parts + k)]);
        if (p > delta) {
          sel.indices.push_back({r, c, k});
          sel.confidences.push_back(p);
        }
      }
  return sel;
}

Tensor decode_coords(const Tensor& vectors, const Tensor& grid, std::span<const CellIndex> indices) {
  expect_rank(vectors, 4, "decode_coords: vectors");
  expect_rank(grid, 3, "decode_coords: grid");
  const auto h = vectors.dim(0), w = vectors.dim(1), parts = vectors.dim(2);
  if (vectors.dim(3) != 2 || grid.dim(0) != h || grid.dim(1) != w || grid.dim(2) != 2) {
    throw ShapeError("decode_coords: vectors " + to_string(vectors.shape()) + " vs grid " + to_string(grid.shape()));
  }
  if (indices.empty()) throw ShapeError("decode_coords: empty selection");
  std::vector<std::int64_t> flat;
  std::vector<Real> base;
  flat.reserve(indices.size() * 2);
  for (const auto& s : indices) {
    if (s.row < 0 || s.row >= h || s.col < 0 || s.col >= w || s.part < 0 || s.part >= parts) {
      throw ShapeError("decode_coords: index (" + std::to_string(s.row) + "," + std::to_string(s.col) + "," +
                       std::to_string(s.part) + ") out of bounds");
    }
    const auto cell = ((s.row * w + s.col) * parts + s.part) * 2;
    flat.push_back(cell);
    flat.push_back(cell + 1);
    const auto g = static_cast<std::size_t>((s.row * w + s.col) * 2);
    base.push_back(grid.data()[g]);
    base.push_back(grid.data()[g + 1]);
  }
  const auto n = static_cast<std::int64_t>(indices.size());
  Tensor picked = ops::reshape(ops::gather(vectors, flat), {n, 2});
  return ops::add(picked, Tensor({n, 2}, std::move(base)));
}

PseudoLabels extract_pseudo_labels(const Tensor& box_logits, const Tensor& vectors, const Tensor& grid, Real delta) {
  Selection sel = threshold_boxes(box_logits, delta);
  PseudoLabels out;
  if (!sel.indices.empty()) out.coords = decode_coords(vectors, grid, sel.indices);
  out.indices = std::move(sel.indices);
  out.confidences = std::move(sel.confidences);
  return out;
}

std::pair<Tensor, Tensor> soft_argmax(const Tensor& heatmap) {
  expect_rank(heatmap, 2, "soft_argmax: heatmap");
  const auto h = heatmap.dim(0), w = heatmap.dim(1);
  std::vector<Real> rows(static_cast<std::size_t>(h * w)), cols(rows.size());
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      rows[static_cast<std::size_t>(i * w + j)] = static_cast<Real>(i);
      cols[static_cast<std::size_t>(i * w + j)] = static_cast<Real>(j);
    }
  Tensor prob = ops::softmax2d(heatmap);
  return {ops::sum(ops::mul(prob, Tensor({h, w}, std::move(rows)))),
          ops::sum(ops::mul(prob, Tensor({h, w}, std::move(cols))))};
}

Real skeleton_distance(const Instance& a, const Instance& b) {
  if (a.keypoints.size() != b.keypoints.size() || a.keypoints.empty()) {
    throw std::invalid_argument("skeleton_distance: part counts differ");
  }
  Real total = 0;
  for (std::size_t k = 0; k < a.keypoints.size(); ++k) {
    total += std::hypot(a.keypoints[k].row - b.keypoints[k].row, a.keypoints[k].col - b.keypoints[k].col);
  }
  return total / static_cast<Real>(a.keypoints.size());
}

Prediction decode_instances(const Tensor& box_logits, const Tensor& vectors, const DecodeParams& params) {
  expect_rank(box_logits, 3, "decode_instances: box logits");
  expect_rank(vectors, 4, "decode_instances: vectors");
  const auto h = box_logits.dim(0), w = box_logits.dim(1), parts = box_logits.dim(2);
  if (vectors.dim(0) != h || vectors.dim(1) != w || vectors.dim(2) != parts || vectors.dim(3) != 2) {
    throw ShapeError("decode_instances: vectors " + to_string(vectors.shape()) + " vs boxes " +
                     to_string(box_logits.shape()));
  }
  if (!(params.nms_radius > 0)) throw std::invalid_argument("nms_radius must be > 0");

  struct Anchor {
    std::int64_t index;
    Real score;
    Instance skeleton;
    Real mass = 0;
  };
  std::vector<Anchor> anchors;
  auto b = box_logits.data();
  auto d = vectors.data();
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      Real s = 0;
      for (std::int64_t k = 0; k < parts; ++k) s += sigmoid(b[static_cast<std::size_t>((r * w + c) * parts + k)]);
      s /= static_cast<Real>(parts);
      if (!(s > params.delta)) continue;
      std::vector<Point> kps;
      for (std::int64_t k = 0; k < parts; ++k) {
        const auto base = static_cast<std::size_t>(((r * w + c) * parts + k) * 2);
        kps.push_back({static_cast<Real>(r) + d[base], static_cast<Real>(c) + d[base + 1]});
      }
      anchors.push_back({r * w + c, s, make_instance(std::move(kps))});
    }

  auto agree = [&](const Instance& x, const Instance& y) {
    for (std::size_t k = 0; k < x.keypoints.size(); ++k) {
      if (std::hypot(x.keypoints[k].row - y.keypoints[k].row, x.keypoints[k].col - y.keypoints[k].col) >
          params.vote_radius)
        return false;
    }
    return true;
  };

  // Vote mass and the confidence-weighted mean skeleton of each anchor's supporters.
  std::vector<Instance> refined(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    std::vector<Point> acc(static_cast<std::size_t>(parts));
    for (const auto& other : anchors) {
      if (!agree(anchors[i].skeleton, other.skeleton)) continue;
      anchors[i].mass += other.score;
      // Offsets from the anchor's own skeleton, so identical supporters leave it exact.
      for (std::size_t k = 0; k < acc.size(); ++k) {
        acc[k].row += other.score * (other.skeleton.keypoints[k].row - anchors[i].skeleton.keypoints[k].row);
        acc[k].col += other.score * (other.skeleton.keypoints[k].col - anchors[i].skeleton.keypoints[k].col);
      }
    }
    for (std::size_t k = 0; k < acc.size(); ++k) {
      acc[k].row = anchors[i].skeleton.keypoints[k].row + acc[k].row / anchors[i].mass;
      acc[k].col = anchors[i].skeleton.keypoints[k].col + acc[k].col / anchors[i].mass;
    }
    refined[i] = make_instance(std::move(acc));
  }

  std::vector<std::size_t> order(anchors.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (anchors[x].mass != anchors[y].mass) return anchors[x].mass > anchors[y].mass;
    if (anchors[x].score != anchors[y].score) return anchors[x].score > anchors[y].score;
    return anchors[x].index < anchors[y].index;
  });

  Prediction pred;
  for (auto i : order) {
    if (static_cast<std::int64_t>(pred.instances.size()) >= params.top_n) break;
    bool keep = true;
    for (const auto& kept : pred.instances) {
      // A keypoint belongs to one animal: a candidate reusing a kept part is a duplicate too.
      bool shares = false;
      for (std::size_t k = 0; k < kept.keypoints.size() && !shares; ++k) {
        shares = std::hypot(kept.keypoints[k].row - refined[i].keypoints[k].row,
                            kept.keypoints[k].col - refined[i].keypoints[k].col) <= params.vote_radius;
      }
      if (shares || skeleton_distance(kept, refined[i]) < params.nms_radius) {
        keep = false;
        break;
      }
    }
    if (!keep) continue;
    pred.instances.push_back(refined[i]);
    pred.scores.push_back(anchors[i].mass / (Real(1) + anchors[i].mass));
  }
  return pred;
}

}  // namespace smp::fusion
