#include "smp/losses.hpp"

#include <stdexcept>
#include <string>

#include "smp/ops.hpp"

namespace smp::losses {

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// Shared elementwise form; callers validate v.
Tensor focal_terms(const Tensor& p, const Tensor& v, Real kappa, Real gamma) {
  Tensor pc = ops::clamp(p, kProbEpsilon, 1 - kProbEpsilon);
  Tensor q = ops::rsub_scalar(1, pc);
  Tensor pos = ops::scale(ops::mul(ops::power(q, gamma), ops::log(pc)), -kappa);
  Tensor neg = ops::scale(ops::mul(ops::power(pc, gamma), ops::log(q)), -(1 - kappa));
  Tensor elem = ops::add(ops::mul(v, pos), ops::mul(ops::rsub_scalar(1, v), neg));
  return ops::mean(elem);
}

}  // namespace

void LossWeights::validate() const {
  if (!(alpha >= 0)) throw std::invalid_argument("alpha must be >= 0");
  if (!(beta >= 0)) throw std::invalid_argument("beta must be >= 0");
  if (!(kappa > 0 && kappa < 1)) throw std::invalid_argument("kappa must lie in (0,1)");
  if (!(gamma >= 0)) throw std::invalid_argument("gamma must be >= 0");
  if (!(delta > 0 && delta < 1)) throw std::invalid_argument("delta must lie in (0,1)");
}

Real combine(const LossBreakdown& t, const LossWeights& w) {
  return t.la + t.lb + t.ld + w.alpha * t.lfl + w.beta * t.lfu;
}

Tensor focal_loss(const Tensor& p, const Tensor& y, Real kappa, Real gamma) {
  same_shape(p, y, "focal_loss");
  for (auto v : y.data()) {
    if (v != 0 && v != 1) throw std::invalid_argument("focal_loss: targets must be binary");
  }
  return focal_terms(p, y, kappa, gamma);
}

Tensor weighted_focal_loss(const Tensor& p, const Tensor& v, Real kappa, Real gamma) {
  same_shape(p, v, "weighted_focal_loss");
  for (auto x : v.data()) {
    if (!(x >= 0 && x <= 1)) throw std::invalid_argument("weighted_focal_loss: v outside [0,1]");
  }
  return focal_terms(p, v, kappa, gamma);
}

Tensor loss_a(const Tensor& heatmaps, const Tensor& keypoint_targets, Real kappa, Real gamma) {
  same_shape(heatmaps, keypoint_targets, "loss_a");
  return focal_loss(ops::sigmoid(heatmaps), keypoint_targets, kappa, gamma);
}

Tensor loss_b(const Tensor& boxes, const Tensor& box_targets, Real kappa, Real gamma) {
  same_shape(boxes, box_targets, "loss_b");
  return focal_loss(ops::sigmoid(boxes), box_targets, kappa, gamma);
}

Tensor loss_d(const Tensor& vectors, const Tensor& vector_targets, const Tensor& box_targets, bool* empty_mask) {
  same_shape(vectors, vector_targets, "loss_d");
  Shape mask_shape = box_targets.shape();
  mask_shape.push_back(2);
  if (mask_shape != vectors.shape()) {
    throw ShapeError("loss_d: box map " + to_string(box_targets.shape()) + " does not match vectors " +
                     to_string(vectors.shape()));
  }
  std::vector<Real> mask;
  mask.reserve(static_cast<std::size_t>(vectors.size()));
  Real count = 0;
  for (auto u : box_targets.data()) {
    mask.push_back(u);
    mask.push_back(u);
    count += 2 * u;
  }
  Tensor masked = ops::mul(ops::sub(vectors, vector_targets), Tensor(std::move(mask_shape), std::move(mask)));
  Tensor sq = ops::sum(ops::mul(masked, masked));
  if (empty_mask) *empty_mask = count == 0;
  return ops::scale(sq, count > 0 ? Real(1) / count : Real(0));
}

Objective supervised_objective(const BranchOutputs& outs, const targets::TargetMaps& targets,
                               const LossWeights& weights) {
  Tensor la = loss_a(outs.heatmaps, targets.keypoints, weights.kappa, weights.gamma);
  Tensor lb = loss_b(outs.boxes, targets.boxes, weights.kappa, weights.gamma);
  Tensor ld = loss_d(outs.vectors, targets.vectors, targets.boxes);
  Objective obj{ops::add(ops::add(la, lb), ld), {}};
  obj.terms.la = la.item();
  obj.terms.lb = lb.item();
  obj.terms.ld = ld.item();
  obj.terms.total = obj.total.item();
  return obj;
}

Tensor fusion_loss(const Tensor& heatmaps, std::span<const PseudoLabels> pseudo, std::int64_t window_halfwidth,
                   Real kappa, Real gamma, FusionGradient mode) {
  Tensor a = heatmaps;
  if (a.rank() == 3) a = ops::reshape(a, {1, a.dim(0), a.dim(1), a.dim(2)});
  if (a.rank() != 4) throw ShapeError("fusion_loss: heatmaps must be [N,H,W,K] or [H,W,K]");
  const auto n = a.dim(0), h = a.dim(1), w = a.dim(2), parts = a.dim(3);
  if (static_cast<std::int64_t>(pseudo.size()) != n) {
    throw ShapeError("fusion_loss: " + std::to_string(pseudo.size()) + " pseudo label sets for " +
                     std::to_string(n) + " frames");
  }
  Tensor scores;
  if (mode == FusionGradient::Soft) {
    scores = targets::soft_pseudo_scores(pseudo, h, w, parts, window_halfwidth);
  } else {
    std::vector<Real> flat;
    flat.reserve(static_cast<std::size_t>(a.size()));
    for (const auto& frame : pseudo) {
      auto s = targets::build_pseudo_target(frame, h, w, parts, window_halfwidth).scores();
      flat.insert(flat.end(), s.data().begin(), s.data().end());
    }
    scores = Tensor(a.shape(), std::move(flat));
  }
  return weighted_focal_loss(ops::sigmoid(a), scores, kappa, gamma);
}

Objective semi_objective(const BranchOutputs& labeled, const targets::TargetMaps& targets,
                         std::optional<FusionInput> labeled_fusion, std::optional<FusionInput> unlabeled_fusion,
                         const LossWeights& weights, std::int64_t window_halfwidth, FusionGradient mode) {
  Objective obj = supervised_objective(labeled, targets, weights);
  if (labeled_fusion && labeled_fusion->outs) {
    Tensor lfl = fusion_loss(labeled_fusion->outs->heatmaps, labeled_fusion->pseudo, window_halfwidth,
                             weights.kappa, weights.gamma, mode);
    obj.terms.lfl = lfl.item();
    obj.total = ops::add(obj.total, ops::scale(lfl, weights.alpha));
  }
  if (unlabeled_fusion && unlabeled_fusion->outs) {
    Tensor lfu = fusion_loss(unlabeled_fusion->outs->heatmaps, unlabeled_fusion->pseudo, window_halfwidth,
                             weights.kappa, weights.gamma, mode);
    obj.terms.lfu = lfu.item();
    obj.total = ops::add(obj.total, ops::scale(lfu, weights.beta));
  }
  obj.terms.total = obj.total.item();
  return obj;
}

}  // namespace smp::losses
