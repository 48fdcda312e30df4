#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "patchforge/detections.hpp"
#include "patchforge/geometry.hpp"
#include "patchforge/patching.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

// Adversarial objective family. lcsl is the three-factor suppression loss
// (objectness x person score x IoU with the largest GT box); the rest are
// the score-only baselines and the IoU ablation variants. The enum names
// appear verbatim as CLI --loss values.
enum class LossKind { lcsl, obj, cls, obj_cls, iou_only, cls_iou, obj_iou };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

enum class TopKRanking { score_product, random };

// For score_product ranking: the k candidates maximizing
// objectness * class_scores[person_class], ties broken by candidate index;
// everything is returned when there are fewer than k. For random ranking:
// k uniform draws without replacement from rng (required in that case).
std::vector<RawPrediction> select_top_k(
    const std::vector<RawPrediction>& candidates, std::size_t k,
    TopKRanking ranking, RandomStream* rng = nullptr,
    int person_class = kPersonClass);

// One image's suppression term: max over the selected candidates of
// objectness * person score * IoU(candidate box, gt_max); 0 when nothing is
// selected. iou_epsilon > 0 switches the IoU factor to its smoothed form
// (used during training so disjoint boxes still carry gradient); 0 keeps it
// exact. gt_max must have positive area.
double lcsl(const std::vector<RawPrediction>& selected, const BBox& gt_max,
            double iou_epsilon = 0.0, int person_class = kPersonClass);

// The box of maximal area, ties broken by lowest index.
BBox largest_gt_box(const std::vector<BBox>& gts);

// Dispatches selection ranking and per-candidate expression by kind; see
// LossKind. gt_max may be null for the pure score variants (obj, cls,
// obj_cls) and is required otherwise. rng is required for iou_only.
double loss_variant(LossKind kind,
                    const std::vector<RawPrediction>& candidates,
                    const BBox* gt_max, std::size_t k,
                    RandomStream* rng = nullptr, double iou_epsilon = 0.0,
                    int person_class = kPersonClass);

// The candidate indices each kind selects before taking the max: top-k by
// the kind's ranking key, or k random draws for iou_only. Shared with the
// gradient path so forward and backward see the same selection.
std::vector<std::size_t> loss_selection_indices(
    LossKind kind, const std::vector<RawPrediction>& candidates,
    std::size_t k, RandomStream* rng = nullptr,
    int person_class = kPersonClass);

// One candidate's term value under a loss kind.
double loss_term(LossKind kind, const RawPrediction& candidate,
                 const BBox* gt_max, double iou_epsilon = 0.0,
                 int person_class = kPersonClass);

// Partials of loss_term with respect to the candidate's objectness and
// person-class score (the box, and hence the IoU factor, is constant with
// respect to the scores).
struct LossTermPartials {
  double d_objectness = 0.0;
  double d_person_score = 0.0;
};

LossTermPartials loss_term_partials(LossKind kind,
                                    const RawPrediction& candidate,
                                    const BBox* gt_max,
                                    double iou_epsilon = 0.0,
                                    int person_class = kPersonClass);

// Smoothness penalty: mean over pixels and channels of
// sqrt(dh^2 + dv^2 + 1e-12) with forward differences (missing neighbors
// contribute zero difference). Constant patches score ~0.
double tv_loss(const Patch& patch);

// Analytic gradient of tv_loss with respect to every patch value, same
// layout as Patch::pixels.
std::vector<double> tv_loss_gradient(const Patch& patch);

struct LossBreakdown {
  double adv = 0.0;
  double tv = 0.0;
  double total = 0.0;
  std::vector<double> per_image_adv;
};

// total = adv + lambda_tv * tv.
LossBreakdown total_loss(double adv, double tv, double lambda_tv);

// Batch form: adv is the arithmetic mean of the per-image terms, reduced in
// input order.
LossBreakdown total_loss(std::vector<double> per_image_adv, double tv,
                         double lambda_tv);

}  // namespace patchforge
