#include "patchforge/detections.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace patchforge {

std::pair<int, double> fuse_confidence(const RawPrediction& raw) {
  if (raw.class_scores.empty()) {
    throw std::invalid_argument("fuse_confidence: empty class score vector");
  }
  int best = 0;
  for (int c = 1; c < static_cast<int>(raw.class_scores.size()); ++c) {
    if (raw.class_scores[c] > raw.class_scores[best]) best = c;
  }
  return {best, raw.objectness * raw.class_scores[best]};
}

std::vector<Detection> nms(const std::vector<RawPrediction>& candidates,
                           double conf_threshold, double iou_threshold) {
  if (conf_threshold < 0.0 || conf_threshold > 1.0 || iou_threshold < 0.0 ||
      iou_threshold > 1.0) {
    throw std::invalid_argument("nms: thresholds must lie in [0,1]");
  }

  struct Fused {
    Detection det;
    std::size_t index;  // original candidate index, for deterministic ties
  };
  std::vector<Fused> survivors;
  survivors.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto [cls, conf] = fuse_confidence(candidates[i]);
    if (conf < conf_threshold) continue;
    survivors.push_back({Detection{candidates[i].box, conf, cls}, i});
  }

  std::sort(survivors.begin(), survivors.end(),
            [](const Fused& a, const Fused& b) {
              if (a.det.confidence != b.det.confidence) {
                return a.det.confidence > b.det.confidence;
              }
              return a.index < b.index;
            });

  std::vector<Detection> kept;
  std::vector<bool> suppressed(survivors.size(), false);
  for (std::size_t i = 0; i < survivors.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(survivors[i].det);
    for (std::size_t j = i + 1; j < survivors.size(); ++j) {
      if (suppressed[j]) continue;
      if (survivors[j].det.class_id != survivors[i].det.class_id) continue;
      if (iou(survivors[j].det.box, survivors[i].det.box) > iou_threshold) {
        suppressed[j] = true;
      }
    }
  }
  return kept;
}

}  // namespace patchforge
