#pragma once

#include <utility>
#include <vector>

#include "patchforge/geometry.hpp"

namespace patchforge {

inline constexpr int kPersonClass = 0;

// Pre-NMS detector candidate: box, objectness and one score per class.
// Class index 0 is "person" by convention.
struct RawPrediction {
  BBox box;
  double objectness = 0.0;
  std::vector<double> class_scores;
};

// Post-NMS output. confidence is objectness times the winning class score.
struct Detection {
  BBox box;
  double confidence = 0.0;
  int class_id = 0;
};

// argmax over class scores (ties broken by lowest index) and the fused
// confidence objectness * class_scores[class_id].
std::pair<int, double> fuse_confidence(const RawPrediction& raw);

// Fuses every candidate, drops those with confidence below conf_threshold,
// then greedy class-wise suppression: keep the highest-confidence survivor
// and remove same-class survivors whose IoU with it exceeds iou_threshold.
// Confidence ties are broken by original candidate index, so identical
// inputs replay identically. Output is sorted by confidence descending.
std::vector<Detection> nms(const std::vector<RawPrediction>& candidates,
                           double conf_threshold, double iou_threshold);

}  // namespace patchforge
