#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchforge/detectors.hpp"
#include "patchforge/losses.hpp"
#include "patchforge/metrics.hpp"
#include "patchforge/patching.hpp"

namespace patchforge {

// Training/evaluation configuration. The defaults are the reference
// operating point: 1000 epochs at learning rate 0.03 with TV weight 2.5,
// top-10 selection, padding to 1920x1920 with probability 0.5, batches of
// 8, and the standard post-processing thresholds 0.25/0.45.
struct AttackConfig {
  int epochs = 1000;
  double learning_rate = 0.03;
  double lambda_tv = 2.5;
  int top_k = 10;
  double pspp_probability = 0.5;
  int pspp_target_h = 1920;
  int pspp_target_w = 1920;
  int batch_size = 8;
  int patch_side = 300;
  double patch_scale = 0.2;
  LossKind loss_kind = LossKind::lcsl;
  double conf_threshold = 0.25;
  double nms_iou_threshold = 0.45;
  std::uint64_t seed = 0;

  // Secondary knobs. pspp_fill is the padding canvas value; patch_init
  // selects constant-gray or seeded-noise initialization; cutout is the
  // optional training-time augmentation hook, off by default.
  double pspp_fill = 0.5;
  std::string patch_init = "gray";  // gray | random
  double cutout_probability = 0.0;
  double cutout_fraction = 0.4;
  int person_class = kPersonClass;
  double loss_iou_epsilon = 1e-6;
  int plateau_patience = 50;
  double plateau_factor = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

// Flat key-value config file ("key = value", '#' comments). Unknown keys
// are errors. Keys use the AttackConfig field names; pspp_target takes the
// combined "WxH" form.
AttackConfig load_config_file(const std::filesystem::path& path);
void apply_config_entry(AttackConfig& config, const std::string& key,
                        const std::string& value);

struct ImageEntry {
  std::string id;
  std::string file;  // absolute path
  int width = 0;
  int height = 0;
};

struct DatasetManifest {
  std::string root;
  std::vector<ImageEntry> entries;
};

// Scans a directory for PNG/JPEG images (sorted by id for deterministic
// order) and records their extents.
DatasetManifest scan_dataset(const std::filesystem::path& root);

void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Cache root: $PATCHFORGE_CACHE if set, else <dataset root>/.cache.
std::filesystem::path cache_root_for(const std::filesystem::path& dataset_root);

// Loads the manifest from the cache when it matches the directory scan,
// otherwise rescans and persists it.
DatasetManifest load_or_scan_dataset(const std::filesystem::path& root);

// Per-image raw detections, the unit of the detection-exchange schema.
struct ExchangeImage {
  std::string id;
  std::vector<RawPrediction> detections;
};

struct DetectionExchange {
  std::string detector;
  double conf_threshold = 0.0;
  double nms_iou_threshold = 0.0;
  std::vector<ExchangeImage> images;
};

// Lossless JSON round trip of raw detection records. Malformed documents
// are rejected with the offending location and field in the message.
DetectionExchange read_detection_exchange(const std::filesystem::path& path);
void write_detection_exchange(const DetectionExchange& exchange,
                              const std::filesystem::path& path);

// One dataset image ready for attack work: pixels, the clean person
// detections and the GT boxes they define.
struct FilteredImage {
  ImageEntry entry;
  ImageGrid image;
  std::vector<RawPrediction> clean_raw;
  std::vector<Detection> clean_person_detections;
  std::vector<BBox> gt_boxes;
};

struct FilteredDataset {
  std::string detector;
  std::string dataset_root;
  double conf_threshold = 0.0;
  double nms_iou_threshold = 0.0;
  std::vector<FilteredImage> images;
  std::size_t skipped_unreadable = 0;
};

// Runs the detector on every manifest image and keeps exactly those whose
// clean post-NMS person detections are non-empty; the surviving detections
// become the image's GT set. Raw clean detections are cached per
// (detector, thresholds) under the cache root as exchange files; pass
// use_cache=false to force recomputation. Unreadable entries are counted
// and skipped.
FilteredDataset filter_person_images(const Detector& detector,
                                     const DatasetManifest& manifest,
                                     double conf_threshold,
                                     double nms_iou_threshold,
                                     bool use_cache = true,
                                     int person_class = kPersonClass);

struct TrainingLogRow {
  int epoch = 0;
  double adv_loss = 0.0;
  double tv_loss = 0.0;
  double total_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainingResult {
  Patch patch;
  std::vector<TrainingLogRow> log;
};

// The training loop: per image draw the padding decision, refresh GT
// (translated by the padding offset when it fires), pick the largest GT
// box, composite the patch over every GT box, run the detector, take the
// top-k-max loss term; per batch average the terms, add the weighted TV
// penalty, take one adaptive-moment step and clamp the patch to [0,1].
// The learning rate halves after `plateau_patience` epochs without
// improvement. Aborts if the loss becomes non-finite. Fully determined by
// (config, detector, dataset).
TrainingResult train_patch(const AttackConfig& config,
                           const Detector& detector,
                           const FilteredDataset& dataset);

// Overlays the patch on every clean person box, reruns detection and NMS,
// and aggregates PASR, AP and ASR against the clean GT boxes. Never
// mutates the patch or the dataset. apply=false skips the overlay, which
// reproduces the clean self-evaluation.
MetricsReport evaluate_patch(const Detector& detector,
                             const FilteredDataset& dataset,
                             const Patch& patch, const AttackConfig& config,
                             bool apply = true,
                             const std::string& patch_label = "patch");

// Report persistence: CSV (header detector,dataset,patch,pasr,map,asr,
// images) and a JSON mirror carrying the per-image array as well.
void write_report_csv(const MetricsReport& report,
                      const std::filesystem::path& path);
void write_report_json(const MetricsReport& report,
                       const std::filesystem::path& path);

// CSV: epoch,adv_loss,tv_loss,total_loss,learning_rate.
void write_training_log(const std::vector<TrainingLogRow>& log,
                        const std::filesystem::path& path);

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);

}  // namespace patchforge
