#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "patchforge/detections.hpp"
#include "patchforge/geometry.hpp"

namespace patchforge {

// Outcome of greedy one-to-one matching between detections and GT boxes.
// tp_flags is aligned with the input detection order.
struct MatchResult {
  std::vector<bool> tp_flags;
  std::size_t fn_count = 0;
  std::map<std::size_t, std::size_t> matched_gt;  // detection index -> gt index

  std::size_t tp_count() const {
    std::size_t n = 0;
    for (bool f : tp_flags) n += f ? 1 : 0;
    return n;
  }
};

// Greedy confidence-ordered one-to-one matching (Pascal-VOC style): a
// detection is a TP iff it is person-class and its best-IoU unmatched GT
// reaches iou_threshold; every unmatched GT counts as a FN. Detections are
// processed in confidence-descending order regardless of input order.
MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<BBox>& gts,
                             double iou_threshold = 0.5,
                             int person_class = kPersonClass);

// One image's detections paired with its GT boxes, for dataset-level
// evaluation.
struct EvalInstance {
  std::vector<Detection> detections;
  std::vector<BBox> gt_boxes;
};

// Single-category (person) all-point average precision: detections across
// the dataset are sorted by confidence descending, matched greedily per
// image, and the area under the P-R curve is accumulated as
// sum (R_{i+1} - R_i) * P_{i+1} with an implicit initial point R_0 = 0.
// Returns 0 when there are no GT boxes or no detections.
double average_precision(const std::vector<EvalInstance>& images,
                         double iou_threshold = 0.5,
                         int person_class = kPersonClass);

// 1 - tp_count / gt_count. gt_count must be positive.
double asr(std::size_t tp_count, std::size_t gt_count);

// 1 iff no detection in dets has any overlap with gt (IoU exactly zero for
// all of them); vacuously 1 for an empty detection set.
int object_attack_success(const BBox& gt, const std::vector<Detection>& dets);

// 1 iff at least one GT box is successfully attacked. gts must be non-empty
// (empty images are filtered out upstream).
int image_attack_success(const std::vector<BBox>& gts,
                         const std::vector<Detection>& dets);

// Mean of per-image attack-success flags; the list must be non-empty.
double pasr(const std::vector<int>& per_image_flags);

struct MissStreak {
  std::size_t frames = 0;
  double seconds = 0.0;
};

// Longest run of 1s (frame with the target undetected) and its duration.
MissStreak longest_miss_streak(const std::vector<int>& frame_flags,
                               double fps);

struct PerImageResult {
  std::string id;
  bool attack_success = false;
  std::size_t gt_count = 0;
  std::size_t detection_count = 0;
};

struct MetricsReport {
  std::string detector;
  std::string dataset;
  std::string patch;
  double pasr = 0.0;
  double map = 0.0;
  double asr = 0.0;
  std::size_t image_count = 0;
  std::vector<PerImageResult> per_image;
};

// Constructed single-image instances demonstrating how mAP/ASR overestimate
// attack success while the zero-overlap image-level criterion does not.
namespace scenarios {

// One person GT fragmented into several overlapping sub-threshold boxes:
// mAP 0, ASR 1, yet the person is still (partially) detected.
EvalInstance fragmented_boxes();

// A single detection whose IoU with the GT is positive but below the
// matching threshold: mAP 0, ASR 1, person still partially detected.
EvalInstance below_threshold_match();

// No detection overlaps the GT at all; the only box is elsewhere.
EvalInstance full_disappearance();

}  // namespace scenarios

}  // namespace patchforge
