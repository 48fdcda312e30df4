#include "patchforge/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace patchforge {

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<BBox>& gts,
                             double iou_threshold, int person_class) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&dets](std::size_t a, std::size_t b) {
                     return dets[a].confidence > dets[b].confidence;
                   });

  MatchResult result;
  result.tp_flags.assign(dets.size(), false);
  std::vector<bool> gt_taken(gts.size(), false);

  for (std::size_t idx : order) {
    const Detection& det = dets[idx];
    if (det.class_id != person_class) continue;  // stays a FP
    double best_iou = 0.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_taken[g]) continue;
      const double v = iou(det.box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size() && best_iou >= iou_threshold) {
      result.tp_flags[idx] = true;
      result.matched_gt[idx] = best_gt;
      gt_taken[best_gt] = true;
    }
  }
  result.fn_count = gts.size() - result.matched_gt.size();
  return result;
}

double average_precision(const std::vector<EvalInstance>& images,
                         double iou_threshold, int person_class) {
  struct Entry {
    double confidence;
    std::size_t image;
    std::size_t det;
  };
  std::vector<Entry> entries;
  std::size_t total_gt = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    total_gt += images[i].gt_boxes.size();
    for (std::size_t d = 0; d < images[i].detections.size(); ++d) {
      if (images[i].detections[d].class_id != person_class) continue;
      entries.push_back({images[i].detections[d].confidence, i, d});
    }
  }
  if (total_gt == 0 || entries.empty()) return 0.0;

  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) {
                     return a.confidence > b.confidence;
                   });

  // Greedy per-image matching in global confidence order. Within one image
  // this visits detections in the same confidence-descending order as
  // match_detections, so the TP/FP assignment coincides.
  std::vector<std::vector<bool>> gt_taken(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    gt_taken[i].assign(images[i].gt_boxes.size(), false);
  }

  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < entries.size(); ++rank) {
    const Entry& e = entries[rank];
    const Detection& det = images[e.image].detections[e.det];
    const auto& gts = images[e.image].gt_boxes;
    double best_iou = 0.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_taken[e.image][g]) continue;
      const double v = iou(det.box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size() && best_iou >= iou_threshold) {
      gt_taken[e.image][best_gt] = true;
      ++tp;
      const double recall = static_cast<double>(tp) / total_gt;
      const double precision = static_cast<double>(tp) / (rank + 1);
      ap += (recall - prev_recall) * precision;
      prev_recall = recall;
    }
  }
  return ap;
}

double asr(std::size_t tp_count, std::size_t gt_count) {
  if (gt_count == 0) {
    throw std::invalid_argument("asr: gt_count must be positive");
  }
  if (tp_count > gt_count) {
    throw std::invalid_argument("asr: tp_count exceeds gt_count");
  }
  return 1.0 - static_cast<double>(tp_count) / static_cast<double>(gt_count);
}

int object_attack_success(const BBox& gt, const std::vector<Detection>& dets) {
  for (const Detection& d : dets) {
    if (iou(gt, d.box) > 0.0) return 0;
  }
  return 1;
}

int image_attack_success(const std::vector<BBox>& gts,
                         const std::vector<Detection>& dets) {
  if (gts.empty()) {
    throw std::invalid_argument(
        "image_attack_success: empty GT set (image should have been filtered "
        "out upstream)");
  }
  for (const BBox& gt : gts) {
    if (object_attack_success(gt, dets) == 1) return 1;
  }
  return 0;
}

double pasr(const std::vector<int>& per_image_flags) {
  if (per_image_flags.empty()) {
    throw std::invalid_argument("pasr: no images");
  }
  std::size_t set = 0;
  for (int f : per_image_flags) set += (f != 0) ? 1 : 0;
  return static_cast<double>(set) /
         static_cast<double>(per_image_flags.size());
}

MissStreak longest_miss_streak(const std::vector<int>& frame_flags,
                               double fps) {
  if (fps <= 0.0) {
    throw std::invalid_argument("longest_miss_streak: fps must be positive");
  }
  std::size_t best = 0;
  std::size_t run = 0;
  for (int f : frame_flags) {
    if (f != 0) {
      ++run;
      best = std::max(best, run);
    } else {
      run = 0;
    }
  }
  return {best, static_cast<double>(best) / fps};
}

namespace scenarios {

namespace {
constexpr double kGtX1 = 100, kGtY1 = 100, kGtX2 = 300, kGtY2 = 500;
}  // namespace

EvalInstance fragmented_boxes() {
  EvalInstance inst;
  inst.gt_boxes.push_back(BBox(kGtX1, kGtY1, kGtX2, kGtY2));
  // Three pieces, every IoU in (0, 0.5): 0.45, 0.45 and 0.20.
  inst.detections.push_back({BBox(100, 100, 300, 280), 0.90, kPersonClass});
  inst.detections.push_back({BBox(100, 320, 300, 500), 0.85, kPersonClass});
  inst.detections.push_back({BBox(120, 260, 280, 360), 0.80, kPersonClass});
  return inst;
}

EvalInstance below_threshold_match() {
  EvalInstance inst;
  inst.gt_boxes.push_back(BBox(kGtX1, kGtY1, kGtX2, kGtY2));
  // One box covering the upper body only: IoU 0.475.
  inst.detections.push_back({BBox(100, 100, 300, 290), 0.90, kPersonClass});
  return inst;
}

EvalInstance full_disappearance() {
  EvalInstance inst;
  inst.gt_boxes.push_back(BBox(kGtX1, kGtY1, kGtX2, kGtY2));
  // The only remaining box is far from the person.
  inst.detections.push_back({BBox(600, 100, 700, 200), 0.60, kPersonClass});
  return inst;
}

}  // namespace scenarios

}  // namespace patchforge
