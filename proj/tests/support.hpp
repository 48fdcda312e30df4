#pragma once

// Shared fixtures and independent oracles for the test suites. The oracles
// here deliberately re-derive expected values through a different route
// than the library (cell counting, double loops, finite differences) so
// agreement is meaningful.

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "patchforge/detections.hpp"
#include "patchforge/detectors.hpp"
#include "patchforge/geometry.hpp"
#include "patchforge/metrics.hpp"
#include "patchforge/patching.hpp"
#include "patchforge/rng.hpp"

namespace testsupport {

namespace pf = patchforge;

// --- rasterization oracle -------------------------------------------------
// For integer-coordinate boxes: count unit grid cells inside each box and
// inside both. IoU follows from the counts.

inline long long raster_cells(const pf::BBox& b) {
  long long n = 0;
  for (long long y = std::llround(b.y1); y < std::llround(b.y2); ++y) {
    for (long long x = std::llround(b.x1); x < std::llround(b.x2); ++x) {
      ++n;
    }
  }
  return n;
}

inline long long raster_intersection_cells(const pf::BBox& a,
                                           const pf::BBox& b) {
  long long n = 0;
  for (long long y = std::llround(a.y1); y < std::llround(a.y2); ++y) {
    for (long long x = std::llround(a.x1); x < std::llround(a.x2); ++x) {
      if (y >= std::llround(b.y1) && y < std::llround(b.y2) &&
          x >= std::llround(b.x1) && x < std::llround(b.x2)) {
        ++n;
      }
    }
  }
  return n;
}

inline double raster_iou(const pf::BBox& a, const pf::BBox& b) {
  const long long inter = raster_intersection_cells(a, b);
  const long long uni = raster_cells(a) + raster_cells(b) - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline pf::BBox random_int_box(pf::RandomStream& rng, int extent = 60,
                               int max_side = 30) {
  const int x1 = static_cast<int>(rng.uniform_index(extent));
  const int y1 = static_cast<int>(rng.uniform_index(extent));
  const int w = static_cast<int>(rng.uniform_index(max_side + 1));
  const int h = static_cast<int>(rng.uniform_index(max_side + 1));
  return pf::BBox(x1, y1, x1 + w, y1 + h);
}

inline pf::BBox random_real_box(pf::RandomStream& rng, double extent = 50.0,
                                double max_side = 25.0) {
  const double x1 = rng.uniform(0.0, extent);
  const double y1 = rng.uniform(0.0, extent);
  return pf::BBox(x1, y1, x1 + rng.uniform(0.0, max_side),
                  y1 + rng.uniform(0.0, max_side));
}

// --- PASR double-loop oracle ----------------------------------------------
// Literal transcription of the object/image/dataset-level definitions:
// an object succeeds iff every predicted box has IoU exactly 0 with it, an
// image succeeds iff any of its objects does, the rate is the mean.

inline double naive_pasr(
    const std::vector<std::vector<pf::BBox>>& per_image_gts,
    const std::vector<std::vector<pf::Detection>>& per_image_dets) {
  std::size_t success = 0;
  for (std::size_t t = 0; t < per_image_gts.size(); ++t) {
    bool image_success = false;
    for (const pf::BBox& gt : per_image_gts[t]) {
      bool object_success = true;
      for (const pf::Detection& d : per_image_dets[t]) {
        if (pf::iou(gt, d.box) != 0.0) {
          object_success = false;
          break;
        }
      }
      if (object_success) {
        image_success = true;
        break;
      }
    }
    if (image_success) ++success;
  }
  return static_cast<double>(success) /
         static_cast<double>(per_image_gts.size());
}

// --- finite differences ---------------------------------------------------

inline std::vector<double> central_difference_gradient(
    const std::function<double(const pf::Patch&)>& f, pf::Patch patch,
    double step = 1e-5) {
  std::vector<double> grad(patch.pixels.size(), 0.0);
  for (std::size_t i = 0; i < patch.pixels.size(); ++i) {
    const double saved = patch.pixels[i];
    patch.pixels[i] = saved + step;
    const double hi = f(patch);
    patch.pixels[i] = saved - step;
    const double lo = f(patch);
    patch.pixels[i] = saved;
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

inline double max_relative_error(const std::vector<double>& analytic,
                                 const std::vector<double>& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), 1e-6});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

// --- bright-blob fixture ----------------------------------------------------
// Deterministic dataset of bright squares on a dark background, sized so the
// default toy detector reports each square as a person. Used by the
// training, evaluation and CLI suites.

struct BlobSpec {
  int top = 0;
  int left = 0;
  int side = 24;
};

inline pf::ImageGrid blob_image(const std::vector<BlobSpec>& blobs,
                                int size = 64, double background = 0.08,
                                double brightness = 0.92,
                                const std::string& id = {}) {
  pf::ImageGrid img = pf::ImageGrid::filled(size, size, background);
  img.id = id;
  for (const BlobSpec& b : blobs) {
    for (int y = b.top; y < std::min(size, b.top + b.side); ++y) {
      for (int x = b.left; x < std::min(size, b.left + b.side); ++x) {
        for (int c = 0; c < pf::kChannels; ++c) img.at(y, x, c) = brightness;
      }
    }
  }
  return img;
}

// The fixture dataset: one centered square per image at shifting positions,
// plus one two-person image.
inline std::vector<pf::ImageGrid> blob_dataset() {
  return {
      blob_image({{8, 8}}, 64, 0.08, 0.92, "img0"),
      blob_image({{16, 24}}, 64, 0.08, 0.92, "img1"),
      blob_image({{24, 12}}, 64, 0.08, 0.92, "img2"),
      blob_image({{32, 32}}, 64, 0.08, 0.92, "img3"),
      blob_image({{12, 28}}, 64, 0.08, 0.92, "img4"),
      blob_image({{8, 8}, {36, 36}}, 64, 0.08, 0.92, "img5"),
  };
}

inline pf::ToyDetectorParams fixture_detector_params() {
  // Default params; the default seed is chosen so every blob_dataset image
  // yields at least one clean person detection and blank backgrounds yield
  // none (verified by the detector tests).
  return pf::ToyDetectorParams{};
}

// --- gradient-check fixture -------------------------------------------------

struct GradCheckFixture {
  pf::ToyDetectorParams params;
  pf::ImageGrid image;
  std::vector<pf::Placement> placements;
  pf::Patch patch;
  pf::LossSpec spec;
};

// One bright square over a noisy background, the patch planted on it. The
// GT box for the loss is the square itself; scores and gradients flow
// through the cells whose windows touch the placement.
inline GradCheckFixture make_gradcheck_fixture(std::uint64_t seed,
                                               int patch_side) {
  GradCheckFixture fx;
  fx.params.seed = seed;
  pf::RandomStream rng(seed, "gradcheck");
  fx.image = blob_image({{16, 16, 24}}, 56, 0.1, 0.9);
  for (double& v : fx.image.pixels) {
    v = std::clamp(v + 0.05 * (rng.uniform() - 0.5), 0.0, 1.0);
  }
  const pf::BBox blob(16, 16, 40, 40);
  fx.placements = pf::plan_placements({blob}, patch_side, 1.0, fx.image.height,
                                      fx.image.width);
  fx.patch = pf::Patch::uniform_random(patch_side, rng);
  fx.spec.kind = pf::LossKind::lcsl;
  fx.spec.top_k = 10;
  fx.spec.lambda_tv = 2.5;
  fx.spec.iou_epsilon = 1e-6;
  fx.spec.gt_max = blob;
  fx.spec.random_select_seed = seed;
  return fx;
}

// Smallest gap protecting the discrete choices (the top-k boundary under the
// ranking key and the argmax over the selected terms). Fixtures whose margin
// is below the exclusion threshold are re-drawn rather than checked.
inline double selection_margin(const std::vector<pf::RawPrediction>& raw,
                               const pf::LossSpec& spec) {
  if (raw.size() < 2) return 1.0;
  const pf::BBox* gt = spec.gt_max.has_value() ? &*spec.gt_max : nullptr;
  pf::RandomStream rng(spec.random_select_seed, "topk-random");
  const auto selected =
      pf::loss_selection_indices(spec.kind, raw, spec.top_k, &rng,
                                 spec.person_class);

  double margin = 1.0;
  // The random draw of iou_only does not depend on the scores, so only the
  // ranked kinds have a top-k boundary to protect.
  if (spec.kind != pf::LossKind::iou_only && selected.size() < raw.size()) {
    auto key = [&](const pf::RawPrediction& c) {
      switch (spec.kind) {
        case pf::LossKind::lcsl:
        case pf::LossKind::obj_cls:
          return c.objectness * c.class_scores[spec.person_class];
        case pf::LossKind::obj:
        case pf::LossKind::obj_iou:
          return c.objectness;
        default:
          return c.class_scores[spec.person_class];
      }
    };
    std::vector<double> keys;
    keys.reserve(raw.size());
    for (const auto& c : raw) keys.push_back(key(c));
    std::sort(keys.begin(), keys.end(), std::greater<>());
    // Exactly equal keys at the boundary come from candidates sharing one
    // cell's responses; they move together under any perturbation, so only a
    // gap to the next strictly smaller key can flip the selection.
    const double kth = keys[selected.size() - 1];
    for (std::size_t i = selected.size(); i < keys.size(); ++i) {
      if (keys[i] != kth) {
        margin = std::min(margin, kth - keys[i]);
        break;
      }
    }
  }

  double best = -1.0;
  double second = -1.0;
  for (std::size_t i : selected) {
    const double v =
        pf::loss_term(spec.kind, raw[i], gt, spec.iou_epsilon, spec.person_class);
    if (v > best) {
      second = best;
      best = v;
    } else if (v > second) {
      second = v;
    }
  }
  if (second >= 0.0) margin = std::min(margin, best - second);
  return margin;
}

inline std::filesystem::path fresh_temp_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("patchforge_test_" + tag + "_" + std::to_string(++counter) +
                    "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
