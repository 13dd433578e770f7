#include "smp/types.hpp"

#include <algorithm>

namespace smp {

std::size_t Instance::num_visible() const {
  return static_cast<std::size_t>(std::count(visible.begin(), visible.end(), true));
}

Instance Instance::scaled(Real factor) const {
  Instance out = *this;
  for (auto& p : out.keypoints) {
    p.row *= factor;
    p.col *= factor;
  }
  return out;
}

Instance Instance::translated(Real d_row, Real d_col) const {
  Instance out = *this;
  for (auto& p : out.keypoints) {
    p.row += d_row;
    p.col += d_col;
  }
  return out;
}

Instance make_instance(std::vector<Point> keypoints) {
  Instance inst;
  inst.visible.assign(keypoints.size(), true);
  inst.keypoints = std::move(keypoints);
  return inst;
}

}  // namespace smp
