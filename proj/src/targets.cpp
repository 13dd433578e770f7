#include "smp/targets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace smp::targets {

namespace {

std::size_t cell(std::int64_t r, std::int64_t c, std::int64_t k, std::int64_t width, std::int64_t parts) {
  return static_cast<std::size_t>((r * width + c) * parts + k);
}

void check_parts(const Instance& inst, std::int64_t parts) {
  if (static_cast<std::int64_t>(inst.keypoints.size()) != parts || inst.visible.size() != inst.keypoints.size()) {
    throw std::invalid_argument("instance has " + std::to_string(inst.keypoints.size()) + " keypoints, expected " +
                                std::to_string(parts));
  }
}

void check_grid(std::int64_t height, std::int64_t width, std::int64_t parts) {
  if (height < 1 || width < 1 || parts < 1) throw std::invalid_argument("grid extents and K must be >= 1");
}

void stamp_window(std::vector<Real>& map, std::int64_t r0, std::int64_t c0, std::int64_t k, std::int64_t w,
                  std::int64_t height, std::int64_t width, std::int64_t parts) {
  for (auto r = std::max<std::int64_t>(0, r0 - w); r <= std::min(height - 1, r0 + w); ++r)
    for (auto c = std::max<std::int64_t>(0, c0 - w); c <= std::min(width - 1, c0 + w); ++c)
      map[cell(r, c, k, width, parts)] = 1;
}

}  // namespace

std::int64_t round_to_cell(Real x) { return static_cast<std::int64_t>(std::ceil(x - Real(0.5))); }

Tensor grid_coordinates(std::int64_t height, std::int64_t width) {
  check_grid(height, width, 1);
  std::vector<Real> m(static_cast<std::size_t>(height * width * 2));
  for (std::int64_t i = 0; i < height; ++i)
    for (std::int64_t j = 0; j < width; ++j) {
      m[static_cast<std::size_t>((i * width + j) * 2)] = static_cast<Real>(i);
      m[static_cast<std::size_t>((i * width + j) * 2 + 1)] = static_cast<Real>(j);
    }
  return Tensor({height, width, 2}, std::move(m));
}

Tensor build_keypoint_target(std::span<const Instance> instances, std::int64_t height, std::int64_t width,
                             std::int64_t parts, std::int64_t window_halfwidth) {
  check_grid(height, width, parts);
  if (window_halfwidth < 0) throw std::invalid_argument("window_halfwidth must be >= 0");
  std::vector<Real> map(static_cast<std::size_t>(height * width * parts), Real(0));
  for (const auto& inst : instances) {
    check_parts(inst, parts);
    for (std::int64_t k = 0; k < parts; ++k) {
      if (!inst.visible[k]) continue;
      stamp_window(map, round_to_cell(inst.keypoints[k].row), round_to_cell(inst.keypoints[k].col), k,
                   window_halfwidth, height, width, parts);
    }
  }
  return Tensor({height, width, parts}, std::move(map));
}

Box pseudo_box(const Instance& instance, std::int64_t height, std::int64_t width, Real margin) {
  Box box{std::numeric_limits<Real>::max(), std::numeric_limits<Real>::max(), std::numeric_limits<Real>::lowest(),
          std::numeric_limits<Real>::lowest()};
  bool any = false;
  for (std::size_t k = 0; k < instance.keypoints.size(); ++k) {
    if (!instance.visible[k]) continue;
    any = true;
    const auto& p = instance.keypoints[k];
    box.row_min = std::min(box.row_min, p.row);
    box.row_max = std::max(box.row_max, p.row);
    box.col_min = std::min(box.col_min, p.col);
    box.col_max = std::max(box.col_max, p.col);
  }
  if (!any) throw std::invalid_argument("pseudo_box: instance has no visible keypoints");
  const Real rmax = static_cast<Real>(height - 1), cmax = static_cast<Real>(width - 1);
  box.row_min = std::clamp(box.row_min - margin, Real(0), rmax);
  box.row_max = std::clamp(box.row_max + margin, Real(0), rmax);
  box.col_min = std::clamp(box.col_min - margin, Real(0), cmax);
  box.col_max = std::clamp(box.col_max + margin, Real(0), cmax);
  return box;
}

Tensor build_box_target(std::span<const Instance> instances, std::int64_t height, std::int64_t width,
                        std::int64_t parts, Real margin) {
  check_grid(height, width, parts);
  std::vector<Real> map(static_cast<std::size_t>(height * width * parts), Real(0));
  for (const auto& inst : instances) {
    check_parts(inst, parts);
    if (inst.num_visible() == 0) continue;
    const Box box = pseudo_box(inst, height, width, margin);
    for (auto r = round_to_cell(box.row_min); r <= round_to_cell(box.row_max); ++r)
      for (auto c = round_to_cell(box.col_min); c <= round_to_cell(box.col_max); ++c)
        for (std::int64_t k = 0; k < parts; ++k) map[cell(r, c, k, width, parts)] = 1;
  }
  return Tensor({height, width, parts}, std::move(map));
}

VectorField build_vector_field(std::span<const Instance> instances, std::int64_t height, std::int64_t width,
                               std::int64_t parts) {
  check_grid(height, width, parts);
  for (const auto& inst : instances) check_parts(inst, parts);
  VectorField out;
  out.part_present.assign(static_cast<std::size_t>(parts), false);
  std::vector<Real> field(static_cast<std::size_t>(height * width * parts * 2), Real(0));
  for (std::int64_t k = 0; k < parts; ++k) {
    std::vector<Point> candidates;
    for (const auto& inst : instances)
      if (inst.visible[k]) candidates.push_back(inst.keypoints[k]);
    if (candidates.empty()) continue;
    out.part_present[k] = true;
    for (std::int64_t r = 0; r < height; ++r)
      for (std::int64_t c = 0; c < width; ++c) {
        Real best = std::numeric_limits<Real>::max();
        Point nearest{};
        for (const auto& p : candidates) {
          const Real dr = p.row - static_cast<Real>(r), dc = p.col - static_cast<Real>(c);
          const Real d2 = dr * dr + dc * dc;
          if (d2 < best) {  // strict: the earlier instance keeps ties
            best = d2;
            nearest = p;
          }
        }
        const auto base = cell(r, c, k, width, parts) * 2;
        field[base] = nearest.row - static_cast<Real>(r);
        field[base + 1] = nearest.col - static_cast<Real>(c);
      }
  }
  out.offsets = Tensor({height, width, parts, 2}, std::move(field));
  return out;
}

Tensor PseudoTarget::scores() const {
  std::vector<Real> s(static_cast<std::size_t>(target.size()));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = target[static_cast<std::int64_t>(i)] * weights[static_cast<std::int64_t>(i)];
  return Tensor(target.shape(), std::move(s));
}

PseudoTarget build_pseudo_target(const PseudoLabels& pseudo, std::int64_t height, std::int64_t width,
                                 std::int64_t parts, std::int64_t window_halfwidth) {
  check_grid(height, width, parts);
  if (window_halfwidth < 0) throw std::invalid_argument("window_halfwidth must be >= 0");
  const auto n = static_cast<std::size_t>(height * width * parts);
  std::vector<Real> target(n, Real(0));
  std::vector<Real> conf(n, Real(-1));
  for (std::size_t t = 0; t < pseudo.size(); ++t) {
    const Real v = pseudo.confidences[t];
    if (!(v >= 0 && v <= 1)) throw std::invalid_argument("pseudo confidence outside [0,1]: " + std::to_string(v));
    const auto k = pseudo.indices[t].part;
    const Point y = pseudo.coord(t);
    const auto r0 = std::clamp<std::int64_t>(round_to_cell(y.row), 0, height - 1);
    const auto c0 = std::clamp<std::int64_t>(round_to_cell(y.col), 0, width - 1);
    for (auto r = std::max<std::int64_t>(0, r0 - window_halfwidth); r <= std::min(height - 1, r0 + window_halfwidth); ++r)
      for (auto c = std::max<std::int64_t>(0, c0 - window_halfwidth); c <= std::min(width - 1, c0 + window_halfwidth); ++c) {
        const auto i = cell(r, c, k, width, parts);
        target[i] = 1;
        conf[i] = std::max(conf[i], v);
      }
  }
  for (auto& w : conf)
    if (w < 0) w = 1;
  return {Tensor({height, width, parts}, std::move(target)), Tensor({height, width, parts}, std::move(conf))};
}

Tensor soft_pseudo_scores(std::span<const PseudoLabels> frames, std::int64_t height, std::int64_t width,
                          std::int64_t parts, std::int64_t window_halfwidth) {
  check_grid(height, width, parts);
  const auto frame_size = height * width * parts;
  const auto total = static_cast<std::size_t>(static_cast<std::int64_t>(frames.size()) * frame_size);
  std::vector<Real> scores(total, Real(0));
  // Owner of each cell: (frame-local pseudo index), -1 if none.
  std::vector<std::int64_t> owner(total, -1);
  const Real reach = static_cast<Real>(window_halfwidth) + 1;
  auto ramp = [reach](Real d) { return std::clamp(reach - std::abs(d), Real(0), Real(1)); };

  std::vector<Tensor> inputs;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& pseudo = frames[f];
    if (pseudo.empty()) continue;
    inputs.push_back(pseudo.coords);
    for (std::size_t t = 0; t < pseudo.size(); ++t) {
      const Real v = pseudo.confidences[t];
      if (!(v >= 0 && v <= 1)) throw std::invalid_argument("pseudo confidence outside [0,1]");
      const auto k = pseudo.indices[t].part;
      const Point y = pseudo.coord(t);
      const auto r_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(y.row - reach)) + 1);
      const auto r_hi = std::min<std::int64_t>(height - 1, static_cast<std::int64_t>(std::ceil(y.row + reach)) - 1);
      const auto c_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(y.col - reach)) + 1);
      const auto c_hi = std::min<std::int64_t>(width - 1, static_cast<std::int64_t>(std::ceil(y.col + reach)) - 1);
      for (auto r = r_lo; r <= r_hi; ++r)
        for (auto c = c_lo; c <= c_hi; ++c) {
          const Real s = v * ramp(static_cast<Real>(r) - y.row) * ramp(static_cast<Real>(c) - y.col);
          const auto i = static_cast<std::size_t>(static_cast<std::int64_t>(f) * frame_size) + cell(r, c, k, width, parts);
          if (s > scores[i]) {
            scores[i] = s;
            owner[i] = static_cast<std::int64_t>(t);
          }
        }
    }
  }

  std::vector<std::shared_ptr<TensorImpl>> coord_impls;
  std::vector<std::vector<Real>> confidences;
  std::vector<std::vector<std::int64_t>> parts_of;
  for (const auto& pseudo : frames) {
    coord_impls.push_back(pseudo.empty() ? nullptr : pseudo.coords.impl());
    confidences.push_back(pseudo.confidences);
    std::vector<std::int64_t> ks;
    for (const auto& s : pseudo.indices) ks.push_back(s.part);
    parts_of.push_back(std::move(ks));
  }
  return make_result(
      "soft_pseudo_scores", Shape{static_cast<std::int64_t>(frames.size()), height, width, parts}, std::move(scores),
      std::move(inputs),
      [coord_impls, confidences, owner = std::move(owner), frame_size, width, parts, reach](std::span<const Real> g) {
        for (std::size_t i = 0; i < owner.size(); ++i) {
          if (owner[i] < 0 || g[i] == 0) continue;
          const auto f = static_cast<std::size_t>(static_cast<std::int64_t>(i) / frame_size);
          const auto& impl = coord_impls[f];
          if (!impl || !impl->requires_grad) continue;
          const auto local = static_cast<std::int64_t>(i) % frame_size;
          const auto r = local / (width * parts), c = (local / parts) % width;
          const auto t = static_cast<std::size_t>(owner[i]);
          const Real yr = impl->data[2 * t], yc = impl->data[2 * t + 1];
          const Real dr = static_cast<Real>(r) - yr, dc = static_cast<Real>(c) - yc;
          const Real ar = std::abs(dr), ac = std::abs(dc);
          const Real wr = std::clamp(reach - ar, Real(0), Real(1)), wc = std::clamp(reach - ac, Real(0), Real(1));
          // d/dy of clamp(reach - |c - y|) is sign(c - y) on the open ramp, else 0.
          const Real sr = (ar > reach - 1 && ar < reach) ? (dr > 0 ? Real(1) : Real(-1)) : Real(0);
          const Real sc = (ac > reach - 1 && ac < reach) ? (dc > 0 ? Real(1) : Real(-1)) : Real(0);
          const Real v = confidences[f][t];
          impl->grad[2 * t] += g[i] * v * sr * wc;
          impl->grad[2 * t + 1] += g[i] * v * wr * sc;
        }
      });
}

TargetMaps build_targets(std::span<const std::vector<Instance>> frames, std::int64_t height, std::int64_t width,
                         std::int64_t parts, std::int64_t window_halfwidth) {
  if (frames.empty()) throw std::invalid_argument("build_targets: empty batch");
  const auto n = static_cast<std::int64_t>(frames.size());
  std::vector<Real> g, u, p;
  for (const auto& inst : frames) {
    auto gk = build_keypoint_target(inst, height, width, parts, window_halfwidth);
    auto uk = build_box_target(inst, height, width, parts);
    auto pk = build_vector_field(inst, height, width, parts);
    g.insert(g.end(), gk.data().begin(), gk.data().end());
    u.insert(u.end(), uk.data().begin(), uk.data().end());
    p.insert(p.end(), pk.offsets.data().begin(), pk.offsets.data().end());
  }
  return {Tensor({n, height, width, parts}, std::move(g)), Tensor({n, height, width, parts}, std::move(u)),
          Tensor({n, height, width, parts, 2}, std::move(p))};
}

}  // namespace smp::targets
