#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "smp/types.hpp"

// Object keypoint similarity and COCO-style average precision.
namespace smp::eval {

struct OksParams {
  Real sigma2 = 1;
  /// Per-keypoint tolerance factors; empty means all 1.
  std::vector<Real> factors;

  void validate(std::size_t parts) const;
  Real factor(std::size_t k) const { return factors.empty() ? Real(1) : factors[k]; }
};

/// sqrt of the tight box area over visible keypoints, floored at 1.
Real instance_scale(const Instance& gt);

/// Mean over visible gt keypoints of exp(-d^2 / (2 scale^2 sigma2 f_k^2)).
/// Throws std::invalid_argument when gt has no visible keypoint or scale <= 0.
Real oks(const Instance& pred, const Instance& gt, const OksParams& params, Real scale);
Real oks(const Instance& pred, const Instance& gt, const OksParams& params);

struct MatchPair {
  std::size_t pred = 0;
  std::size_t gt = 0;
  Real oks = 0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<std::size_t> unmatched_preds;
  std::vector<std::size_t> unmatched_gts;
};

/// Greedy: predictions in descending score order (stable), each taking the
/// unmatched gt of highest OKS when that OKS reaches the threshold.
MatchResult match_instances(const Prediction& preds, std::span<const Instance> gts, const OksParams& params,
                            Real oks_threshold);

inline constexpr std::array<Real, 10> kOksThresholds{0.50, 0.55, 0.60, 0.65, 0.70,
                                                     0.75, 0.80, 0.85, 0.90, 0.95};

/// 101-point interpolated AP at one threshold over all frames.
Real average_precision_at(std::span<const Prediction> preds, std::span<const std::vector<Instance>> gts,
                          const OksParams& params, Real oks_threshold);

struct ApReport {
  Real ap = 0;
  std::vector<Real> per_threshold;
  std::int64_t n_pred = 0;
  std::int64_t n_gt = 0;
};

void to_json(nlohmann::json& j, const ApReport& r);
void from_json(const nlohmann::json& j, ApReport& r);

/// Mean of average_precision_at over kOksThresholds. Throws
/// std::invalid_argument when there are no gt instances at all.
ApReport average_precision(std::span<const Prediction> preds, std::span<const std::vector<Instance>> gts,
                           const OksParams& params);

}  // namespace smp::eval
