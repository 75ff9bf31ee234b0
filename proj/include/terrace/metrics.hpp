#pragma once

#include <algorithm>
#include <vector>

#include <json.hpp>

#include "terrace/raster.hpp"

namespace terrace {

// |A intersect B| / |A union B|; two empty masks count as a perfect match.
inline double pixel_iou(const raster& pred, const raster& gt) {
  if (pred.width != gt.width || pred.height != gt.height || pred.channels != 1 ||
      gt.channels != 1)
    throw shape_error("pixel_iou: masks must be aligned single-channel rasters");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    bool a = pred.data[i] != 0.f, b = gt.data[i] != 0.f;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double pixel_iou(const instance_map& pred, const instance_map& gt) {
  raster a(1, pred.height, pred.width), b(1, gt.height, gt.width);
  for (std::size_t i = 0; i < pred.labels.size(); ++i) a.data[i] = pred.labels[i] > 0;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) b.data[i] = gt.labels[i] > 0;
  return pixel_iou(a, b);
}

struct matched_pair {
  std::int32_t gt_id;
  std::int32_t pred_id;
  double iou;
};

struct instance_match_result {
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
  std::vector<matched_pair> matches;
  double f1 = 1.0;
};

// Greedy matching mirroring the challenge convention: candidate pairs in
// descending IoU order (ties by gt id then pred id) match when IoU clears
// the threshold and neither side is taken.
inline instance_match_result instance_f1(const instance_map& pred, const instance_map& gt,
                                         double iou_threshold = 0.5) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw shape_error("instance_f1: prediction and ground truth dims differ");
  std::int32_t n_pred = pred.max_label(), n_gt = gt.max_label();

  std::vector<std::int64_t> pred_area(static_cast<std::size_t>(n_pred) + 1, 0);
  std::vector<std::int64_t> gt_area(static_cast<std::size_t>(n_gt) + 1, 0);
  // sparse intersection counts keyed by gt*(n_pred+1)+pred
  std::vector<std::int64_t> inter(static_cast<std::size_t>(n_gt + 1) *
                                      static_cast<std::size_t>(n_pred + 1),
                                  0);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    std::int32_t g = gt.labels[i], p = pred.labels[i];
    if (g > 0) ++gt_area[static_cast<std::size_t>(g)];
    if (p > 0) ++pred_area[static_cast<std::size_t>(p)];
    if (g > 0 && p > 0)
      ++inter[static_cast<std::size_t>(g) * static_cast<std::size_t>(n_pred + 1) +
              static_cast<std::size_t>(p)];
  }

  struct cand {
    double iou;
    std::int32_t gt_id, pred_id;
  };
  std::vector<cand> cands;
  for (std::int32_t g = 1; g <= n_gt; ++g)
    for (std::int32_t p = 1; p <= n_pred; ++p) {
      std::int64_t ii = inter[static_cast<std::size_t>(g) * static_cast<std::size_t>(n_pred + 1) +
                              static_cast<std::size_t>(p)];
      if (ii == 0) continue;
      double iou = static_cast<double>(ii) /
                   static_cast<double>(gt_area[static_cast<std::size_t>(g)] +
                                       pred_area[static_cast<std::size_t>(p)] - ii);
      if (iou >= iou_threshold) cands.push_back({iou, g, p});
    }
  std::sort(cands.begin(), cands.end(), [](const cand& a, const cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.gt_id != b.gt_id) return a.gt_id < b.gt_id;
    return a.pred_id < b.pred_id;
  });

  instance_match_result res;
  std::vector<bool> gt_taken(static_cast<std::size_t>(n_gt) + 1, false);
  std::vector<bool> pred_taken(static_cast<std::size_t>(n_pred) + 1, false);
  for (const auto& c : cands) {
    if (gt_taken[static_cast<std::size_t>(c.gt_id)] ||
        pred_taken[static_cast<std::size_t>(c.pred_id)])
      continue;
    gt_taken[static_cast<std::size_t>(c.gt_id)] = true;
    pred_taken[static_cast<std::size_t>(c.pred_id)] = true;
    res.matches.push_back({c.gt_id, c.pred_id, c.iou});
  }
  res.true_positives = static_cast<int>(res.matches.size());
  res.false_positives = n_pred - res.true_positives;
  res.false_negatives = n_gt - res.true_positives;
  int denom = 2 * res.true_positives + res.false_positives + res.false_negatives;
  res.f1 = denom == 0 ? 1.0 : 2.0 * res.true_positives / static_cast<double>(denom);
  return res;
}

// Per-scene rows plus count-aggregated totals, serializable as the
// evaluation report.
struct evaluation_report {
  struct row {
    std::string id;
    double pixel_iou;
    int tp, fp, fn;
    double f1;
  };
  std::vector<row> scenes;

  nlohmann::json to_json() const {
    nlohmann::json per_scene = nlohmann::json::array();
    std::int64_t tp = 0, fp = 0, fn = 0;
    double iou_sum = 0;
    for (const auto& r : scenes) {
      per_scene.push_back({{"id", r.id},
                           {"pixel_iou", r.pixel_iou},
                           {"TP", r.tp},
                           {"FP", r.fp},
                           {"FN", r.fn},
                           {"F1", r.f1}});
      tp += r.tp;
      fp += r.fp;
      fn += r.fn;
      iou_sum += r.pixel_iou;
    }
    std::int64_t denom = 2 * tp + fp + fn;
    nlohmann::json aggregate = {
        {"pixel_iou", scenes.empty() ? 1.0 : iou_sum / static_cast<double>(scenes.size())},
        {"TP", tp},
        {"FP", fp},
        {"FN", fn},
        {"F1", denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom)}};
    return {{"scenes", per_scene}, {"aggregate", aggregate}};
  }
};

}  // namespace terrace
