#include "patchforge/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace patchforge {

LossKind parse_loss_kind(std::string_view name) {
  if (name == "lcsl") return LossKind::lcsl;
  if (name == "obj") return LossKind::obj;
  if (name == "cls") return LossKind::cls;
  if (name == "obj_cls") return LossKind::obj_cls;
  if (name == "iou_only") return LossKind::iou_only;
  if (name == "cls_iou") return LossKind::cls_iou;
  if (name == "obj_iou") return LossKind::obj_iou;
  throw std::invalid_argument("unknown loss kind: " + std::string(name));
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::lcsl: return "lcsl";
    case LossKind::obj: return "obj";
    case LossKind::cls: return "cls";
    case LossKind::obj_cls: return "obj_cls";
    case LossKind::iou_only: return "iou_only";
    case LossKind::cls_iou: return "cls_iou";
    case LossKind::obj_iou: return "obj_iou";
  }
  return "?";
}

namespace {

double person_score(const RawPrediction& c, int person_class) {
  if (person_class < 0 ||
      person_class >= static_cast<int>(c.class_scores.size())) {
    throw std::invalid_argument("candidate lacks the target class score");
  }
  return c.class_scores[person_class];
}

// Indices of the k best candidates under `key`, ties by candidate index.
std::vector<std::size_t> top_k_indices_by(
    const std::vector<RawPrediction>& candidates, std::size_t k,
    double (*key)(const RawPrediction&, int), int person_class) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return key(candidates[a], person_class) >
                            key(candidates[b], person_class);
                   });
  if (order.size() > k) order.resize(k);
  return order;
}

std::vector<std::size_t> random_k_indices(std::size_t n, std::size_t k,
                                          RandomStream& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (k >= n) return order;
  // Partial Fisher-Yates: the first k entries are a uniform sample without
  // replacement.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(order[i], order[j]);
  }
  order.resize(k);
  return order;
}

double key_product(const RawPrediction& c, int pc) {
  return c.objectness * person_score(c, pc);
}
double key_objectness(const RawPrediction& c, int) { return c.objectness; }
double key_class(const RawPrediction& c, int pc) {
  return person_score(c, pc);
}

double iou_factor(const BBox& a, const BBox& b, double eps) {
  return eps > 0.0 ? smoothed_iou(a, b, eps) : iou(a, b);
}

}  // namespace

std::vector<RawPrediction> select_top_k(
    const std::vector<RawPrediction>& candidates, std::size_t k,
    TopKRanking ranking, RandomStream* rng, int person_class) {
  if (k < 1) throw std::invalid_argument("select_top_k: k must be >= 1");
  if (candidates.empty()) return {};

  std::vector<std::size_t> picked;
  if (ranking == TopKRanking::score_product) {
    picked = top_k_indices_by(candidates, k, key_product, person_class);
  } else {
    if (rng == nullptr) {
      throw std::invalid_argument("select_top_k: random ranking needs an rng");
    }
    picked = random_k_indices(candidates.size(), k, *rng);
  }
  std::vector<RawPrediction> out;
  out.reserve(picked.size());
  for (std::size_t i : picked) out.push_back(candidates[i]);
  return out;
}

double lcsl(const std::vector<RawPrediction>& selected, const BBox& gt_max,
            double iou_epsilon, int person_class) {
  if (area(gt_max) <= 0.0) {
    throw std::invalid_argument("lcsl: gt_max must have positive area");
  }
  double best = 0.0;
  for (const RawPrediction& c : selected) {
    const double v = c.objectness * person_score(c, person_class) *
                     iou_factor(c.box, gt_max, iou_epsilon);
    if (v > best) best = v;
  }
  return best;
}

BBox largest_gt_box(const std::vector<BBox>& gts) {
  if (gts.empty()) {
    throw std::invalid_argument("largest_gt_box: empty GT list");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < gts.size(); ++i) {
    if (area(gts[i]) > area(gts[best])) best = i;
  }
  return gts[best];
}

namespace {

void require_gt(LossKind kind, const BBox* gt_max) {
  const bool needs_gt = kind == LossKind::lcsl || kind == LossKind::iou_only ||
                        kind == LossKind::cls_iou || kind == LossKind::obj_iou;
  if (!needs_gt) return;
  if (gt_max == nullptr) {
    throw std::invalid_argument("loss term: this kind needs gt_max");
  }
  if (area(*gt_max) <= 0.0) {
    throw std::invalid_argument("loss term: gt_max must have positive area");
  }
}

}  // namespace

std::vector<std::size_t> loss_selection_indices(
    LossKind kind, const std::vector<RawPrediction>& candidates,
    std::size_t k, RandomStream* rng, int person_class) {
  if (k < 1) throw std::invalid_argument("loss selection: k must be >= 1");
  if (candidates.empty()) return {};
  switch (kind) {
    case LossKind::lcsl:
    case LossKind::obj_cls:
      return top_k_indices_by(candidates, k, key_product, person_class);
    case LossKind::obj:
    case LossKind::obj_iou:
      return top_k_indices_by(candidates, k, key_objectness, person_class);
    case LossKind::cls:
    case LossKind::cls_iou:
      return top_k_indices_by(candidates, k, key_class, person_class);
    case LossKind::iou_only:
      if (rng == nullptr) {
        throw std::invalid_argument("loss selection: iou_only needs an rng");
      }
      return random_k_indices(candidates.size(), k, *rng);
  }
  return {};
}

double loss_term(LossKind kind, const RawPrediction& candidate,
                 const BBox* gt_max, double iou_epsilon, int person_class) {
  require_gt(kind, gt_max);
  switch (kind) {
    case LossKind::lcsl:
      return candidate.objectness * person_score(candidate, person_class) *
             iou_factor(candidate.box, *gt_max, iou_epsilon);
    case LossKind::obj:
      return candidate.objectness;
    case LossKind::cls:
      return person_score(candidate, person_class);
    case LossKind::obj_cls:
      return candidate.objectness * person_score(candidate, person_class);
    case LossKind::iou_only:
      return iou_factor(candidate.box, *gt_max, iou_epsilon);
    case LossKind::cls_iou:
      return person_score(candidate, person_class) *
             iou_factor(candidate.box, *gt_max, iou_epsilon);
    case LossKind::obj_iou:
      return candidate.objectness *
             iou_factor(candidate.box, *gt_max, iou_epsilon);
  }
  return 0.0;
}

LossTermPartials loss_term_partials(LossKind kind,
                                    const RawPrediction& candidate,
                                    const BBox* gt_max, double iou_epsilon,
                                    int person_class) {
  require_gt(kind, gt_max);
  LossTermPartials p;
  const double obj = candidate.objectness;
  const double cls = person_score(candidate, person_class);
  switch (kind) {
    case LossKind::lcsl: {
      const double f = iou_factor(candidate.box, *gt_max, iou_epsilon);
      p.d_objectness = cls * f;
      p.d_person_score = obj * f;
      break;
    }
    case LossKind::obj:
      p.d_objectness = 1.0;
      break;
    case LossKind::cls:
      p.d_person_score = 1.0;
      break;
    case LossKind::obj_cls:
      p.d_objectness = cls;
      p.d_person_score = obj;
      break;
    case LossKind::iou_only:
      break;  // constant with respect to the scores
    case LossKind::cls_iou:
      p.d_person_score = iou_factor(candidate.box, *gt_max, iou_epsilon);
      break;
    case LossKind::obj_iou:
      p.d_objectness = iou_factor(candidate.box, *gt_max, iou_epsilon);
      break;
  }
  return p;
}

double loss_variant(LossKind kind,
                    const std::vector<RawPrediction>& candidates,
                    const BBox* gt_max, std::size_t k, RandomStream* rng,
                    double iou_epsilon, int person_class) {
  if (candidates.empty()) {
    if (k < 1) throw std::invalid_argument("loss_variant: k must be >= 1");
    return 0.0;
  }
  require_gt(kind, gt_max);
  double best = 0.0;
  for (std::size_t i :
       loss_selection_indices(kind, candidates, k, rng, person_class)) {
    const double v = loss_term(kind, candidates[i], gt_max, iou_epsilon,
                               person_class);
    if (v > best) best = v;
  }
  return best;
}

namespace {
constexpr double kTvEps = 1e-12;
}

double tv_loss(const Patch& patch) {
  if (patch.side < 2) throw std::invalid_argument("tv_loss: side must be >= 2");
  double sum = 0.0;
  for (int y = 0; y < patch.side; ++y) {
    for (int x = 0; x < patch.side; ++x) {
      for (int c = 0; c < kChannels; ++c) {
        const double dh =
            (x + 1 < patch.side) ? patch.at(y, x + 1, c) - patch.at(y, x, c)
                                 : 0.0;
        const double dv =
            (y + 1 < patch.side) ? patch.at(y + 1, x, c) - patch.at(y, x, c)
                                 : 0.0;
        sum += std::sqrt(dh * dh + dv * dv + kTvEps);
      }
    }
  }
  return sum / (static_cast<double>(patch.side) * patch.side * kChannels);
}

std::vector<double> tv_loss_gradient(const Patch& patch) {
  if (patch.side < 2) throw std::invalid_argument("tv_loss: side must be >= 2");
  const double norm =
      1.0 / (static_cast<double>(patch.side) * patch.side * kChannels);
  std::vector<double> grad(patch.pixels.size(), 0.0);
  auto idx = [&patch](int y, int x, int c) {
    return (static_cast<std::size_t>(y) * patch.side + x) * kChannels + c;
  };
  for (int y = 0; y < patch.side; ++y) {
    for (int x = 0; x < patch.side; ++x) {
      for (int c = 0; c < kChannels; ++c) {
        const double dh =
            (x + 1 < patch.side) ? patch.at(y, x + 1, c) - patch.at(y, x, c)
                                 : 0.0;
        const double dv =
            (y + 1 < patch.side) ? patch.at(y + 1, x, c) - patch.at(y, x, c)
                                 : 0.0;
        const double denom = std::sqrt(dh * dh + dv * dv + kTvEps);
        const double gh = norm * dh / denom;
        const double gv = norm * dv / denom;
        if (x + 1 < patch.side) {
          grad[idx(y, x + 1, c)] += gh;
          grad[idx(y, x, c)] -= gh;
        }
        if (y + 1 < patch.side) {
          grad[idx(y + 1, x, c)] += gv;
          grad[idx(y, x, c)] -= gv;
        }
      }
    }
  }
  return grad;
}

LossBreakdown total_loss(double adv, double tv, double lambda_tv) {
  LossBreakdown b;
  b.adv = adv;
  b.tv = tv;
  b.total = adv + lambda_tv * tv;
  return b;
}

LossBreakdown total_loss(std::vector<double> per_image_adv, double tv,
                         double lambda_tv) {
  if (per_image_adv.empty()) {
    throw std::invalid_argument("total_loss: empty batch");
  }
  double sum = 0.0;
  for (double v : per_image_adv) sum += v;
  LossBreakdown b = total_loss(sum / per_image_adv.size(), tv, lambda_tv);
  b.per_image_adv = std::move(per_image_adv);
  return b;
}

}  // namespace patchforge
