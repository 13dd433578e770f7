#include "smp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace smp::eval {

void OksParams::validate(std::size_t parts) const {
  if (!(sigma2 > 0)) throw std::invalid_argument("oks: sigma2 must be > 0");
  if (!factors.empty() && factors.size() != parts) {
    throw std::invalid_argument("oks: " + std::to_string(factors.size()) + " factors for " + std::to_string(parts) +
                                " keypoints");
  }
  for (auto f : factors)
    if (!(f > 0)) throw std::invalid_argument("oks: factors must be > 0");
}

Real instance_scale(const Instance& gt) {
  bool any = false;
  Real rmin = 0, rmax = 0, cmin = 0, cmax = 0;
  for (std::size_t k = 0; k < gt.keypoints.size(); ++k) {
    if (!gt.visible[k]) continue;
    const auto& p = gt.keypoints[k];
    if (!any) {
      rmin = rmax = p.row, cmin = cmax = p.col, any = true;
    } else {
      rmin = std::min(rmin, p.row), rmax = std::max(rmax, p.row);
      cmin = std::min(cmin, p.col), cmax = std::max(cmax, p.col);
    }
  }
  if (!any) throw std::invalid_argument("oks: gt has no visible keypoint");
  return std::max(Real(1), std::sqrt((rmax - rmin) * (cmax - cmin)));
}

Real oks(const Instance& pred, const Instance& gt, const OksParams& params, Real scale) {
  if (!(scale > 0)) throw std::invalid_argument("oks: scale must be > 0");
  if (pred.keypoints.size() != gt.keypoints.size()) {
    throw std::invalid_argument("oks: prediction has " + std::to_string(pred.keypoints.size()) +
                                " keypoints, gt has " + std::to_string(gt.keypoints.size()));
  }
  params.validate(gt.keypoints.size());
  Real total = 0;
  std::size_t visible = 0;
  for (std::size_t k = 0; k < gt.keypoints.size(); ++k) {
    if (!gt.visible[k]) continue;
    const Real dr = pred.keypoints[k].row - gt.keypoints[k].row;
    const Real dc = pred.keypoints[k].col - gt.keypoints[k].col;
    const Real f = params.factor(k);
    total += std::exp(-(dr * dr + dc * dc) / (2 * scale * scale * params.sigma2 * f * f));
    ++visible;
  }
  if (visible == 0) throw std::invalid_argument("oks: gt has no visible keypoint");
  return total / static_cast<Real>(visible);
}

Real oks(const Instance& pred, const Instance& gt, const OksParams& params) {
  return oks(pred, gt, params, instance_scale(gt));
}

namespace {

std::vector<std::size_t> score_order(const Prediction& preds) {
  if (preds.scores.size() != preds.instances.size()) {
    throw std::invalid_argument("prediction scores do not align with instances");
  }
  std::vector<std::size_t> order(preds.instances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds.scores[a] > preds.scores[b]; });
  return order;
}

}  // namespace

MatchResult match_instances(const Prediction& preds, std::span<const Instance> gts, const OksParams& params,
                            Real oks_threshold) {
  std::vector<Real> scales;
  for (const auto& g : gts) scales.push_back(instance_scale(g));
  std::vector<bool> taken(gts.size(), false);
  MatchResult out;
  for (auto p : score_order(preds)) {
    std::size_t best = gts.size();
    Real best_oks = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const Real s = oks(preds.instances[p], gts[g], params, scales[g]);
      if (s > best_oks) best_oks = s, best = g;
    }
    if (best < gts.size() && best_oks >= oks_threshold) {
      taken[best] = true;
      out.pairs.push_back({p, best, best_oks});
    } else {
      out.unmatched_preds.push_back(p);
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (!taken[g]) out.unmatched_gts.push_back(g);
  return out;
}

Real average_precision_at(std::span<const Prediction> preds, std::span<const std::vector<Instance>> gts,
                          const OksParams& params, Real oks_threshold) {
  if (preds.size() != gts.size()) throw std::invalid_argument("average_precision: frame count mismatch");
  struct Detection {
    Real score;
    bool tp;
  };
  std::vector<Detection> dets;
  std::size_t n_gt = 0;
  for (std::size_t f = 0; f < preds.size(); ++f) {
    n_gt += gts[f].size();
    const auto m = match_instances(preds[f], gts[f], params, oks_threshold);
    std::vector<bool> tp(preds[f].instances.size(), false);
    for (const auto& pair : m.pairs) tp[pair.pred] = true;
    for (auto p : score_order(preds[f])) dets.push_back({preds[f].scores[p], tp[p]});
  }
  if (n_gt == 0) throw std::invalid_argument("average_precision: no ground-truth instances");
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });

  std::vector<Real> precision, recall;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    tp += dets[i].tp ? 1 : 0;
    precision.push_back(static_cast<Real>(tp) / static_cast<Real>(i + 1));
    recall.push_back(static_cast<Real>(tp) / static_cast<Real>(n_gt));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  Real sum = 0;
  for (int r = 0; r <= 100; ++r) {
    const Real level = static_cast<Real>(r) / 100;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101;
}

void to_json(nlohmann::json& j, const ApReport& r) {
  j = {{"ap", r.ap}, {"per_threshold", r.per_threshold}, {"n_pred", r.n_pred}, {"n_gt", r.n_gt}};
}

void from_json(const nlohmann::json& j, ApReport& r) {
  r.ap = j.at("ap").get<Real>();
  r.per_threshold = j.at("per_threshold").get<std::vector<Real>>();
  r.n_pred = j.at("n_pred").get<std::int64_t>();
  r.n_gt = j.at("n_gt").get<std::int64_t>();
}

ApReport average_precision(std::span<const Prediction> preds, std::span<const std::vector<Instance>> gts,
                           const OksParams& params) {
  ApReport report;
  for (const auto& p : preds) report.n_pred += static_cast<std::int64_t>(p.instances.size());
  for (const auto& g : gts) report.n_gt += static_cast<std::int64_t>(g.size());
  if (report.n_gt == 0) throw std::invalid_argument("average_precision: no ground-truth instances");
  Real sum = 0;
  for (auto t : kOksThresholds) {
    report.per_threshold.push_back(average_precision_at(preds, gts, params, t));
    sum += report.per_threshold.back();
  }
  report.ap = sum / static_cast<Real>(kOksThresholds.size());
  return report;
}

}  // namespace smp::eval
