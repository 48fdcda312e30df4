#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patchforge/detections.hpp"
#include "patchforge/losses.hpp"
#include "patchforge/patching.hpp"

namespace patchforge {

struct ExtentPolicy {
  bool any_size = true;
  int height = 0;
  int width = 0;
};

struct DetectorInfo {
  std::string name;
  int class_count = 1;  // index 0 is person
  ExtentPolicy extent;
  bool differentiable = false;
};

// The surface the attack optimizes against. Evaluation only needs
// detect_raw; gradient-based training additionally needs an in-process
// differentiable implementation (see ToyDetector). External detectors are
// evaluated through the detection-exchange files instead.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual const DetectorInfo& info() const = 0;
  virtual std::vector<RawPrediction> detect_raw(const ImageGrid& image) const = 0;
};

// Parameters of the built-in toy detector. Kernel weights and biases are a
// pure deterministic function of the seed, so two constructions with equal
// seeds are bit-identical. Defaults are tuned so the bright-blob fixture
// images used across the test suite are detected cleanly.
struct ToyDetectorParams {
  std::uint64_t seed = 1;
  int grid_stride = 8;
  int kernel_size = 5;
  std::vector<double> anchor_scales = {3.0};
  int class_count = 1;
};

// A single seeded convolution bank: per anchor cell, one response per output
// channel; objectness = logistic(response 0), class scores =
// logistic(responses 1..C). Boxes are anchor-centered squares of side
// grid_stride * anchor_scale. Everything is closed form, so the gradient of
// any score with respect to any image pixel is exact.
class ToyDetector final : public Detector {
 public:
  explicit ToyDetector(ToyDetectorParams params);

  const DetectorInfo& info() const override { return info_; }
  const ToyDetectorParams& params() const { return params_; }

  std::vector<RawPrediction> detect_raw(const ImageGrid& image) const override;

  // dL/d(objectness) and dL/d(person score) for chosen candidates, pushed
  // back through the logistic and the convolution to dL/d(image pixel).
  struct CandidateScoreGrad {
    std::size_t candidate_index = 0;
    double d_objectness = 0.0;
    double d_person_score = 0.0;
    int person_class = kPersonClass;
  };

  std::vector<double> backprop_to_image(
      const ImageGrid& image, const std::vector<RawPrediction>& raw,
      const std::vector<CandidateScoreGrad>& grads) const;

  double bias(int out_channel) const { return biases_[out_channel]; }

 private:
  int cells_y(int image_height) const {
    return image_height / params_.grid_stride;
  }
  int cells_x(int image_width) const {
    return image_width / params_.grid_stride;
  }
  double weight(int out_channel, int ky, int kx, int ch) const {
    const int k = params_.kernel_size;
    return weights_[((static_cast<std::size_t>(out_channel) * k + ky) * k +
                     kx) *
                        kChannels +
                    ch];
  }

  ToyDetectorParams params_;
  DetectorInfo info_;
  std::vector<double> weights_;  // (class_count+1) x k x k x 3
  std::vector<double> biases_;   // class_count+1
};

std::unique_ptr<Detector> make_toy_detector(const ToyDetectorParams& params);

// Everything needed to evaluate (and differentiate) the training objective
// on one image: loss kind and selection size, TV weight, the smoothed-IoU
// epsilon used inside the loss, the largest GT box, and the seed for the
// random-selection variant.
struct LossSpec {
  LossKind kind = LossKind::lcsl;
  std::size_t top_k = 10;
  double lambda_tv = 2.5;
  double iou_epsilon = 1e-6;
  int person_class = kPersonClass;
  std::optional<BBox> gt_max;
  std::uint64_t random_select_seed = 0;
};

// Patch -> composite -> detector -> selection -> max term, plus the TV
// penalty: total = adv + lambda_tv * tv. Works with any detector.
LossBreakdown loss_forward(const Detector& detector, const ImageGrid& image,
                           const std::vector<Placement>& placements,
                           const Patch& patch, const LossSpec& spec);

struct LossGradientResult {
  LossBreakdown loss;
  std::vector<double> patch_gradient;  // same layout as Patch::pixels
};

// Exact reverse-mode gradient of the total loss with respect to every patch
// pixel, composed through the bilinear patch applier and the detector's
// forward map. The max is differentiated as a subgradient: gradient flows
// to the first maximal selected candidate. Rejects detectors that are not
// differentiable.
LossGradientResult loss_gradient(const Detector& detector,
                                 const ImageGrid& image,
                                 const std::vector<Placement>& placements,
                                 const Patch& patch, const LossSpec& spec);

}  // namespace patchforge
