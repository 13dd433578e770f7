#pragma once

#include <optional>
#include <span>

#include "smp/targets.hpp"
#include "smp/types.hpp"

namespace smp {

/// Network head outputs for a batch.
struct BranchOutputs {
  Tensor heatmaps;  // A [N,H,W,K]
  Tensor boxes;     // B [N,H,W,K] logits
  Tensor vectors;   // D [N,H,W,K,2]
};

}  // namespace smp

namespace smp::losses {

inline constexpr Real kProbEpsilon = 1e-12;

struct LossWeights {
  Real alpha = 0.01;
  Real beta = 0.1;
  Real kappa = 0.25;
  Real gamma = 2.0;
  Real delta = 0.05;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct LossBreakdown {
  Real la = 0, lb = 0, ld = 0, lfl = 0, lfu = 0, total = 0;
};

/// la + lb + ld + alpha*lfl + beta*lfu from the term values.
Real combine(const LossBreakdown& terms, const LossWeights& weights);

/// How the fusion loss treats the pseudo-target rasterization.
enum class FusionGradient {
  /// Hard windows around rounded pseudo keypoints; gradient reaches A only.
  Cut,
  /// Sub-cell soft windows (targets::soft_pseudo_scores); gradient also reaches D.
  Soft,
};

/// Mean over elements of -k(1-p)^g log p (y = 1) and -(1-k)p^g log(1-p) (y = 0).
/// p is clamped to [1e-12, 1 - 1e-12]; y must be binary and shaped like p.
Tensor focal_loss(const Tensor& p, const Tensor& y, Real kappa, Real gamma);

/// Mean of -v k (1-p)^g log p - (1-v)(1-k) p^g log(1-p). v must lie in [0,1].
Tensor weighted_focal_loss(const Tensor& p, const Tensor& v, Real kappa, Real gamma);

/// focal_loss(sigmoid(A), G)
Tensor loss_a(const Tensor& heatmaps, const Tensor& keypoint_targets, Real kappa, Real gamma);
/// focal_loss(sigmoid(B), U)
Tensor loss_b(const Tensor& boxes, const Tensor& box_targets, Real kappa, Real gamma);
/// Squared error of D against P over cells inside the box map U (broadcast over
/// the trailing 2), normalized by the count of masked-in elements. With an
/// empty mask it returns 0 and sets *empty_mask.
Tensor loss_d(const Tensor& vectors, const Tensor& vector_targets, const Tensor& box_targets,
              bool* empty_mask = nullptr);

/// Scalar tensor of the taped objective plus the value of every term.
struct Objective {
  Tensor total;
  LossBreakdown terms;
};

Objective supervised_objective(const BranchOutputs& outs, const targets::TargetMaps& targets,
                               const LossWeights& weights);

/// v-weighted focal loss of sigmoid(A) against the pseudo-target scores of each
/// frame. A is [N,H,W,K] with one PseudoLabels per frame, or [H,W,K] with one.
Tensor fusion_loss(const Tensor& heatmaps, std::span<const PseudoLabels> pseudo, std::int64_t window_halfwidth,
                   Real kappa, Real gamma, FusionGradient mode = FusionGradient::Cut);

/// Pseudo labels and branch outputs for one part of the semi-supervised objective.
struct FusionInput {
  const BranchOutputs* outs = nullptr;
  std::span<const PseudoLabels> pseudo;
};

/// la + lb + ld + alpha*lfl + beta*lfu. `labeled_fusion` feeds lfl (the
/// labeled frames' own pseudo labels); `unlabeled_fusion` feeds lfu. Missing
/// inputs contribute 0 and are left off the tape.
Objective semi_objective(const BranchOutputs& labeled, const targets::TargetMaps& targets,
                         std::optional<FusionInput> labeled_fusion, std::optional<FusionInput> unlabeled_fusion,
                         const LossWeights& weights, std::int64_t window_halfwidth = targets::kDefaultWindowHalfwidth,
                         FusionGradient mode = FusionGradient::Cut);

}  // namespace smp::losses
