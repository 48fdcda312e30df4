#include "patchforge/detectors.hpp"

#include <cmath>
#include <stdexcept>

#include "patchforge/rng.hpp"

namespace patchforge {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

ToyDetector::ToyDetector(ToyDetectorParams params) : params_(std::move(params)) {
  if (params_.grid_stride < 1) {
    throw std::invalid_argument("ToyDetector: grid_stride must be positive");
  }
  if (params_.kernel_size < 1 || params_.kernel_size % 2 == 0) {
    throw std::invalid_argument("ToyDetector: kernel_size must be odd and positive");
  }
  if (params_.class_count < 1) {
    throw std::invalid_argument("ToyDetector: class_count must be >= 1");
  }
  if (params_.anchor_scales.empty()) {
    throw std::invalid_argument("ToyDetector: anchor_scales must be non-empty");
  }
  for (double s : params_.anchor_scales) {
    if (s <= 0.0) {
      throw std::invalid_argument("ToyDetector: anchor scales must be positive");
    }
  }

  const int out_channels = params_.class_count + 1;
  const int k = params_.kernel_size;
  const double fan_in = static_cast<double>(k) * k * kChannels;
  RandomStream rng(params_.seed, "toy-kernel");
  weights_.resize(static_cast<std::size_t>(out_channels) * k * k * kChannels);
  // Seeded noise around a small positive mean: bright regions raise the
  // responses systematically while the negative bias keeps uniform dark
  // backgrounds below the usual confidence thresholds.
  for (double& w : weights_) {
    w = (0.35 + 2.2 * rng.normal()) / std::sqrt(fan_in);
  }
  biases_.resize(out_channels);
  for (double& b : biases_) b = rng.uniform(-3.0, -0.5);

  info_.name = "toy";
  info_.class_count = params_.class_count;
  info_.extent.any_size = true;
  info_.differentiable = true;
}

std::vector<RawPrediction> ToyDetector::detect_raw(
    const ImageGrid& image) const {
  const int stride = params_.grid_stride;
  const int k = params_.kernel_size;
  const int half_k = k / 2;
  const int rows = cells_y(image.height);
  const int cols = cells_x(image.width);
  const int out_channels = params_.class_count + 1;

  std::vector<RawPrediction> out;
  out.reserve(static_cast<std::size_t>(rows) * cols *
              params_.anchor_scales.size());
  std::vector<double> responses(out_channels);

  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const int center_y = i * stride + stride / 2;
      const int center_x = j * stride + stride / 2;
      const int y0 = center_y - half_k;
      const int x0 = center_x - half_k;
      for (int t = 0; t < out_channels; ++t) responses[t] = biases_[t];
      for (int ky = 0; ky < k; ++ky) {
        const int y = y0 + ky;
        if (y < 0 || y >= image.height) continue;  // zero padding
        for (int kx = 0; kx < k; ++kx) {
          const int x = x0 + kx;
          if (x < 0 || x >= image.width) continue;
          for (int c = 0; c < kChannels; ++c) {
            const double px = image.at(y, x, c);
            for (int t = 0; t < out_channels; ++t) {
              responses[t] += weight(t, ky, kx, c) * px;
            }
          }
        }
      }
      const double cx = (j + 0.5) * stride;
      const double cy = (i + 0.5) * stride;
      for (double scale : params_.anchor_scales) {
        const double side = stride * scale;
        RawPrediction p;
        p.box = BBox(cx - 0.5 * side, cy - 0.5 * side, cx + 0.5 * side,
                     cy + 0.5 * side);
        p.objectness = logistic(responses[0]);
        p.class_scores.resize(params_.class_count);
        for (int c = 0; c < params_.class_count; ++c) {
          p.class_scores[c] = logistic(responses[1 + c]);
        }
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

std::vector<double> ToyDetector::backprop_to_image(
    const ImageGrid& image, const std::vector<RawPrediction>& raw,
    const std::vector<CandidateScoreGrad>& grads) const {
  const int stride = params_.grid_stride;
  const int k = params_.kernel_size;
  const int half_k = k / 2;
  const int cols = cells_x(image.width);
  const std::size_t n_scales = params_.anchor_scales.size();

  std::vector<double> image_grad(image.pixels.size(), 0.0);
  for (const CandidateScoreGrad& g : grads) {
    if (g.candidate_index >= raw.size()) {
      throw std::invalid_argument("backprop_to_image: candidate index out of range");
    }
    const RawPrediction& cand = raw[g.candidate_index];
    const std::size_t cell = g.candidate_index / n_scales;
    const int i = static_cast<int>(cell) / cols;
    const int j = static_cast<int>(cell) % cols;
    const int y0 = i * stride + stride / 2 - half_k;
    const int x0 = j * stride + stride / 2 - half_k;

    // logistic' = s * (1 - s)
    const double o = cand.objectness;
    const double d_resp_obj = g.d_objectness * o * (1.0 - o);
    const double s = cand.class_scores[g.person_class];
    const double d_resp_cls = g.d_person_score * s * (1.0 - s);

    for (int ky = 0; ky < k; ++ky) {
      const int y = y0 + ky;
      if (y < 0 || y >= image.height) continue;
      for (int kx = 0; kx < k; ++kx) {
        const int x = x0 + kx;
        if (x < 0 || x >= image.width) continue;
        for (int c = 0; c < kChannels; ++c) {
          double acc = 0.0;
          if (d_resp_obj != 0.0) acc += d_resp_obj * weight(0, ky, kx, c);
          if (d_resp_cls != 0.0) {
            acc += d_resp_cls * weight(1 + g.person_class, ky, kx, c);
          }
          image_grad[(static_cast<std::size_t>(y) * image.width + x) *
                         kChannels +
                     c] += acc;
        }
      }
    }
  }
  return image_grad;
}

std::unique_ptr<Detector> make_toy_detector(const ToyDetectorParams& params) {
  return std::make_unique<ToyDetector>(params);
}

namespace {

struct AdvEval {
  double adv = 0.0;
  bool has_argmax = false;
  std::size_t argmax = 0;
};

AdvEval evaluate_adv(const std::vector<RawPrediction>& raw,
                     const LossSpec& spec) {
  AdvEval eval;
  if (raw.empty()) return eval;
  const BBox* gt = spec.gt_max.has_value() ? &*spec.gt_max : nullptr;
  RandomStream selection_rng(spec.random_select_seed, "topk-random");
  const auto indices = loss_selection_indices(spec.kind, raw, spec.top_k,
                                              &selection_rng,
                                              spec.person_class);
  for (std::size_t i : indices) {
    const double v =
        loss_term(spec.kind, raw[i], gt, spec.iou_epsilon, spec.person_class);
    if (v > eval.adv) {
      eval.adv = v;
      eval.has_argmax = true;
      eval.argmax = i;
    }
  }
  return eval;
}

}  // namespace

LossBreakdown loss_forward(const Detector& detector, const ImageGrid& image,
                           const std::vector<Placement>& placements,
                           const Patch& patch, const LossSpec& spec) {
  const ImageGrid adv_image = apply_patch(image, placements, patch);
  const auto raw = detector.detect_raw(adv_image);
  const AdvEval eval = evaluate_adv(raw, spec);
  return total_loss(eval.adv, tv_loss(patch), spec.lambda_tv);
}

LossGradientResult loss_gradient(const Detector& detector,
                                 const ImageGrid& image,
                                 const std::vector<Placement>& placements,
                                 const Patch& patch, const LossSpec& spec) {
  if (!detector.info().differentiable) {
    throw std::invalid_argument(
        "loss_gradient: detector '" + detector.info().name +
        "' is not differentiable; export its raw detections via the "
        "detection-exchange files and evaluate externally instead");
  }
  const auto* toy = dynamic_cast<const ToyDetector*>(&detector);
  if (toy == nullptr) {
    throw std::invalid_argument(
        "loss_gradient: no in-process gradient implementation for detector '" +
        detector.info().name + "'");
  }

  const PatchApplication applied = apply_patch_traced(image, placements, patch);
  const auto raw = toy->detect_raw(applied.image);
  const AdvEval eval = evaluate_adv(raw, spec);

  LossGradientResult result;
  result.loss = total_loss(eval.adv, tv_loss(patch), spec.lambda_tv);

  result.patch_gradient.assign(patch.pixels.size(), 0.0);
  if (spec.lambda_tv != 0.0) {
    const auto tv_grad = tv_loss_gradient(patch);
    for (std::size_t i = 0; i < tv_grad.size(); ++i) {
      result.patch_gradient[i] = spec.lambda_tv * tv_grad[i];
    }
  }

  if (eval.has_argmax) {
    const BBox* gt = spec.gt_max.has_value() ? &*spec.gt_max : nullptr;
    const LossTermPartials partials =
        loss_term_partials(spec.kind, raw[eval.argmax], gt, spec.iou_epsilon,
                           spec.person_class);
    if (partials.d_objectness != 0.0 || partials.d_person_score != 0.0) {
      const auto image_grad = toy->backprop_to_image(
          applied.image, raw,
          {{eval.argmax, partials.d_objectness, partials.d_person_score,
            spec.person_class}});
      accumulate_patch_gradient(applied, placements, patch.side, image_grad,
                                result.patch_gradient);
    }
  }
  return result;
}

}  // namespace patchforge
