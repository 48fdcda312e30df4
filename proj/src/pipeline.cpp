#include "patchforge/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>

#include "patchforge/image_io.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

using nlohmann::json;

void AttackConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (learning_rate <= 0.0) {
    throw std::invalid_argument("config: learning_rate must be positive");
  }
  if (lambda_tv < 0.0) {
    throw std::invalid_argument("config: lambda_tv must be non-negative");
  }
  if (top_k < 1) throw std::invalid_argument("config: top_k must be >= 1");
  if (pspp_probability < 0.0 || pspp_probability > 1.0) {
    throw std::invalid_argument("config: pspp_probability must lie in [0,1]");
  }
  if (pspp_target_h < 1 || pspp_target_w < 1) {
    throw std::invalid_argument("config: pspp target must be positive");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("config: batch_size must be >= 1");
  }
  if (patch_side < 2) {
    throw std::invalid_argument("config: patch_side must be >= 2");
  }
  if (patch_scale <= 0.0) {
    throw std::invalid_argument("config: patch_scale must be positive");
  }
  if (conf_threshold < 0.0 || conf_threshold > 1.0 ||
      nms_iou_threshold < 0.0 || nms_iou_threshold > 1.0) {
    throw std::invalid_argument("config: thresholds must lie in [0,1]");
  }
  if (pspp_fill < 0.0 || pspp_fill > 1.0) {
    throw std::invalid_argument("config: pspp_fill must lie in [0,1]");
  }
  if (patch_init != "gray" && patch_init != "random") {
    throw std::invalid_argument("config: patch_init must be gray or random");
  }
  if (cutout_probability < 0.0 || cutout_probability > 1.0) {
    throw std::invalid_argument("config: cutout_probability must lie in [0,1]");
  }
  if (cutout_probability > 0.0 &&
      (cutout_fraction <= 0.0 || cutout_fraction > 1.0)) {
    throw std::invalid_argument("config: cutout_fraction must lie in (0,1]");
  }
  if (plateau_patience < 1) {
    throw std::invalid_argument("config: plateau_patience must be >= 1");
  }
  if (plateau_factor <= 0.0 || plateau_factor >= 1.0) {
    throw std::invalid_argument("config: plateau_factor must lie in (0,1)");
  }
}

namespace {

std::pair<int, int> parse_size(const std::string& value) {
  const auto sep = value.find('x');
  if (sep == std::string::npos) {
    throw std::invalid_argument("expected WxH size, got '" + value + "'");
  }
  const int w = std::stoi(value.substr(0, sep));
  const int h = std::stoi(value.substr(sep + 1));
  return {w, h};
}

}  // namespace

void apply_config_entry(AttackConfig& config, const std::string& key,
                        const std::string& value) {
  try {
    if (key == "epochs") config.epochs = std::stoi(value);
    else if (key == "learning_rate") config.learning_rate = std::stod(value);
    else if (key == "lambda_tv") config.lambda_tv = std::stod(value);
    else if (key == "top_k") config.top_k = std::stoi(value);
    else if (key == "pspp_probability") config.pspp_probability = std::stod(value);
    else if (key == "pspp_target") {
      const auto [w, h] = parse_size(value);
      config.pspp_target_w = w;
      config.pspp_target_h = h;
    }
    else if (key == "batch_size") config.batch_size = std::stoi(value);
    else if (key == "patch_side") config.patch_side = std::stoi(value);
    else if (key == "patch_scale") config.patch_scale = std::stod(value);
    else if (key == "loss_kind") config.loss_kind = parse_loss_kind(value);
    else if (key == "conf_threshold") config.conf_threshold = std::stod(value);
    else if (key == "nms_iou_threshold") config.nms_iou_threshold = std::stod(value);
    else if (key == "seed") config.seed = std::stoull(value);
    else if (key == "pspp_fill") config.pspp_fill = std::stod(value);
    else if (key == "patch_init") config.patch_init = value;
    else if (key == "cutout_probability") config.cutout_probability = std::stod(value);
    else if (key == "cutout_fraction") config.cutout_fraction = std::stod(value);
    else if (key == "person_class") config.person_class = std::stoi(value);
    else if (key == "loss_iou_epsilon") config.loss_iou_epsilon = std::stod(value);
    else if (key == "plateau_patience") config.plateau_patience = std::stoi(value);
    else if (key == "plateau_factor") config.plateau_factor = std::stod(value);
    else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad value '" + value + "' for key '" +
                                key + "'");
  }
}

AttackConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open config file: " + path.string());
  }
  AttackConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const std::string stripped = strip(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
    }
    apply_config_entry(config, strip(stripped.substr(0, eq)),
                       strip(stripped.substr(eq + 1)));
  }
  config.validate();
  return config;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::filesystem::path cache_root_for(
    const std::filesystem::path& dataset_root) {
  if (const char* env = std::getenv("PATCHFORGE_CACHE")) {
    if (*env != '\0') return std::filesystem::path(env);
  }
  return dataset_root / ".cache";
}

DatasetManifest scan_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) {
    throw std::runtime_error("dataset root is not a directory: " +
                             root.string());
  }
  DatasetManifest manifest;
  manifest.root = std::filesystem::absolute(root).string();
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
    ImageEntry e;
    e.id = entry.path().stem().string();
    e.file = std::filesystem::absolute(entry.path()).string();
    try {
      const auto [h, w] = probe_image_extent(entry.path());
      e.height = h;
      e.width = w;
    } catch (const std::exception&) {
      // Unreadable header; keep the entry so downstream reports the skip.
    }
    manifest.entries.push_back(std::move(e));
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ImageEntry& a, const ImageEntry& b) { return a.id < b.id; });
  return manifest;
}

void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path) {
  json doc;
  doc["root"] = manifest.root;
  doc["entries"] = json::array();
  for (const auto& e : manifest.entries) {
    doc["entries"].push_back(
        {{"id", e.id}, {"file", e.file}, {"width", e.width}, {"height", e.height}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing manifest: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("manifest: invalid JSON: " + std::string(e.what()));
  }
  DatasetManifest manifest;
  manifest.root = doc.at("root").get<std::string>();
  for (const auto& e : doc.at("entries")) {
    manifest.entries.push_back({e.at("id").get<std::string>(),
                                e.at("file").get<std::string>(),
                                e.at("width").get<int>(),
                                e.at("height").get<int>()});
  }
  return manifest;
}

DatasetManifest load_or_scan_dataset(const std::filesystem::path& root) {
  const auto cache = cache_root_for(root);
  const auto manifest_path = cache / "manifest.json";
  DatasetManifest scanned = scan_dataset(root);
  if (std::filesystem::exists(manifest_path)) {
    try {
      DatasetManifest cached = read_manifest(manifest_path);
      if (cached.root == scanned.root &&
          cached.entries.size() == scanned.entries.size()) {
        bool same = true;
        for (std::size_t i = 0; i < cached.entries.size(); ++i) {
          if (cached.entries[i].id != scanned.entries[i].id ||
              cached.entries[i].file != scanned.entries[i].file) {
            same = false;
            break;
          }
        }
        if (same) return cached;
      }
    } catch (const std::exception&) {
      // fall through to rescan
    }
  }
  try {
    std::filesystem::create_directories(cache);
    write_manifest(scanned, manifest_path);
  } catch (const std::exception&) {
    // best-effort persistence; the scan itself is authoritative
  }
  return scanned;
}

namespace {

[[noreturn]] void exchange_error(const std::string& where,
                                 const std::string& what) {
  throw std::runtime_error("detection exchange: " + where + ": " + what);
}

double require_unit(const json& node, const std::string& where,
                    const char* field) {
  if (!node.contains(field)) {
    exchange_error(where, std::string("missing field '") + field + "'");
  }
  const json& v = node.at(field);
  if (!v.is_number()) {
    exchange_error(where, std::string("field '") + field + "' must be a number");
  }
  const double d = v.get<double>();
  if (d < 0.0 || d > 1.0) {
    exchange_error(where, std::string("field '") + field + "' value " +
                              format_double(d) + " out of [0,1]");
  }
  return d;
}

}  // namespace

DetectionExchange read_detection_exchange(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open detection exchange: " + path.string());
  }
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    exchange_error(path.string(), std::string("invalid JSON: ") + e.what());
  }

  DetectionExchange ex;
  if (!doc.contains("detector") || !doc.at("detector").is_string()) {
    exchange_error("document", "missing field 'detector'");
  }
  ex.detector = doc.at("detector").get<std::string>();
  ex.conf_threshold = require_unit(doc, "document", "conf_threshold");
  ex.nms_iou_threshold = require_unit(doc, "document", "nms_iou_threshold");
  if (!doc.contains("images") || !doc.at("images").is_array()) {
    exchange_error("document", "missing field 'images'");
  }

  std::size_t img_idx = 0;
  for (const json& jimg : doc.at("images")) {
    const std::string img_where = "images[" + std::to_string(img_idx) + "]";
    ExchangeImage img;
    if (!jimg.contains("id") || !jimg.at("id").is_string()) {
      exchange_error(img_where, "missing field 'id'");
    }
    img.id = jimg.at("id").get<std::string>();
    if (!jimg.contains("detections") || !jimg.at("detections").is_array()) {
      exchange_error(img_where, "missing field 'detections'");
    }
    std::size_t det_idx = 0;
    for (const json& jdet : jimg.at("detections")) {
      const std::string where =
          img_where + ".detections[" + std::to_string(det_idx) + "]";
      RawPrediction raw;
      if (!jdet.contains("box")) {
        exchange_error(where, "missing field 'box'");
      }
      const json& jbox = jdet.at("box");
      if (!jbox.is_array() || jbox.size() != 4 || !jbox[0].is_number() ||
          !jbox[1].is_number() || !jbox[2].is_number() || !jbox[3].is_number()) {
        exchange_error(where, "field 'box' must be [x1,y1,x2,y2]");
      }
      try {
        raw.box = BBox(jbox[0].get<double>(), jbox[1].get<double>(),
                       jbox[2].get<double>(), jbox[3].get<double>());
      } catch (const std::invalid_argument& e) {
        exchange_error(where, e.what());
      }
      raw.objectness = require_unit(jdet, where, "objectness");
      if (!jdet.contains("class_scores") || !jdet.at("class_scores").is_array() ||
          jdet.at("class_scores").empty()) {
        exchange_error(where, "missing field 'class_scores'");
      }
      for (const json& js : jdet.at("class_scores")) {
        if (!js.is_number()) {
          exchange_error(where, "field 'class_scores' must hold numbers");
        }
        const double s = js.get<double>();
        if (s < 0.0 || s > 1.0) {
          exchange_error(where, "class score " + format_double(s) +
                                    " out of [0,1]");
        }
        raw.class_scores.push_back(s);
      }
      img.detections.push_back(std::move(raw));
      ++det_idx;
    }
    ex.images.push_back(std::move(img));
    ++img_idx;
  }
  return ex;
}

void write_detection_exchange(const DetectionExchange& exchange,
                              const std::filesystem::path& path) {
  json doc;
  doc["detector"] = exchange.detector;
  doc["conf_threshold"] = exchange.conf_threshold;
  doc["nms_iou_threshold"] = exchange.nms_iou_threshold;
  doc["images"] = json::array();
  for (const auto& img : exchange.images) {
    json jimg;
    jimg["id"] = img.id;
    jimg["detections"] = json::array();
    for (const auto& det : img.detections) {
      jimg["detections"].push_back(
          {{"box", {det.box.x1, det.box.y1, det.box.x2, det.box.y2}},
           {"objectness", det.objectness},
           {"class_scores", det.class_scores}});
    }
    doc["images"].push_back(std::move(jimg));
  }
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write detection exchange: " +
                             path.string());
  }
  out << doc.dump(2) << '\n';
  if (!out) {
    throw std::runtime_error("failed writing detection exchange: " +
                             path.string());
  }
}

namespace {

std::string threshold_tag(double conf, double nms_iou) {
  return "clean_conf" + format_double(conf) + "_nms" + format_double(nms_iou) +
         ".json";
}

}  // namespace

FilteredDataset filter_person_images(const Detector& detector,
                                     const DatasetManifest& manifest,
                                     double conf_threshold,
                                     double nms_iou_threshold, bool use_cache,
                                     int person_class) {
  FilteredDataset out;
  out.detector = detector.info().name;
  out.dataset_root = manifest.root;
  out.conf_threshold = conf_threshold;
  out.nms_iou_threshold = nms_iou_threshold;

  const auto cache_dir =
      cache_root_for(manifest.root) / detector.info().name;
  const auto cache_file =
      cache_dir / threshold_tag(conf_threshold, nms_iou_threshold);

  // A cache entry is only trusted when detector and thresholds match and it
  // covers every manifest image; anything else is stale and recomputed.
  std::map<std::string, std::vector<RawPrediction>> cached_raw;
  if (use_cache && std::filesystem::exists(cache_file)) {
    try {
      DetectionExchange ex = read_detection_exchange(cache_file);
      if (ex.detector == detector.info().name &&
          ex.conf_threshold == conf_threshold &&
          ex.nms_iou_threshold == nms_iou_threshold) {
        for (auto& img : ex.images) {
          cached_raw[img.id] = std::move(img.detections);
        }
        for (const auto& e : manifest.entries) {
          if (!cached_raw.count(e.id)) {
            cached_raw.clear();
            break;
          }
        }
      }
    } catch (const std::exception&) {
      cached_raw.clear();
    }
  }

  DetectionExchange fresh;
  fresh.detector = detector.info().name;
  fresh.conf_threshold = conf_threshold;
  fresh.nms_iou_threshold = nms_iou_threshold;
  const bool have_cache = !cached_raw.empty();

  for (const auto& entry : manifest.entries) {
    ImageGrid image;
    try {
      image = load_image(entry.file);
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping unreadable image " << entry.file << ": "
                << e.what() << '\n';
      ++out.skipped_unreadable;
      continue;
    }
    image.id = entry.id;

    std::vector<RawPrediction> raw;
    if (have_cache) {
      raw = cached_raw.at(entry.id);
    } else {
      raw = detector.detect_raw(image);
      fresh.images.push_back({entry.id, raw});
    }

    const auto dets = nms(raw, conf_threshold, nms_iou_threshold);
    FilteredImage fi;
    fi.entry = entry;
    fi.entry.height = image.height;
    fi.entry.width = image.width;
    for (const Detection& d : dets) {
      if (d.class_id != person_class) continue;
      fi.clean_person_detections.push_back(d);
      fi.gt_boxes.push_back(d.box);
    }
    if (fi.clean_person_detections.empty()) continue;
    fi.image = std::move(image);
    fi.clean_raw = std::move(raw);
    out.images.push_back(std::move(fi));
  }

  if (use_cache && !have_cache) {
    try {
      std::filesystem::create_directories(cache_dir);
      write_detection_exchange(fresh, cache_file);
    } catch (const std::exception&) {
      // cache persistence is best-effort
    }
  }
  return out;
}

namespace {

BBox translate(const BBox& b, double dx, double dy) {
  return BBox(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy);
}

}  // namespace

TrainingResult train_patch(const AttackConfig& config,
                           const Detector& detector,
                           const FilteredDataset& dataset) {
  config.validate();
  if (!detector.info().differentiable) {
    throw std::invalid_argument(
        "train_patch: detector '" + detector.info().name +
        "' is not differentiable; gradient training needs an in-process "
        "differentiable detector");
  }
  if (dataset.images.empty()) {
    throw std::invalid_argument("train_patch: no images after filtering");
  }

  RandomStream init_rng(config.seed, "init");
  RandomStream pspp_rng(config.seed, "pspp");
  RandomStream topk_rng(config.seed, "topk-random");
  RandomStream cutout_rng(config.seed, "cutout");

  TrainingResult result;
  result.patch = config.patch_init == "random"
                     ? Patch::uniform_random(config.patch_side, init_rng)
                     : Patch::constant(config.patch_side, 0.5);

  const std::size_t n_pixels = result.patch.pixels.size();
  std::vector<double> adam_m(n_pixels, 0.0);
  std::vector<double> adam_v(n_pixels, 0.0);
  long adam_t = 0;
  double lr = config.learning_rate;
  double best_total = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;

  std::vector<double> grad(n_pixels);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double epoch_adv_sum = 0.0;
    double epoch_tv_sum = 0.0;
    std::size_t epoch_images = 0;
    std::size_t epoch_batches = 0;

    for (std::size_t start = 0; start < dataset.images.size();
         start += config.batch_size) {
      const std::size_t stop = std::min(
          dataset.images.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::size_t batch_n = stop - start;

      // Optional cutout: the patch is applied with a zeroed square this
      // step; the zeroed pixels receive no adversarial gradient.
      bool cutout_active = false;
      CutoutRegion cut;
      if (config.cutout_probability > 0.0 &&
          cutout_rng.uniform() < config.cutout_probability) {
        cutout_active = true;
        cut = sample_cutout(result.patch.side, config.cutout_fraction,
                            cutout_rng);
      }
      const Patch applied_patch =
          cutout_active ? apply_cutout(result.patch, cut) : result.patch;

      std::fill(grad.begin(), grad.end(), 0.0);
      std::vector<double> batch_adv;
      batch_adv.reserve(batch_n);

      for (std::size_t i = start; i < stop; ++i) {
        const FilteredImage& fi = dataset.images[i];
        const PsppResult padded =
            pspp(fi.image, std::max(config.pspp_target_h, fi.image.height),
                 std::max(config.pspp_target_w, fi.image.width),
                 config.pspp_probability, config.pspp_fill, pspp_rng);

        std::vector<BBox> gts = fi.gt_boxes;
        if (padded.padded) {
          for (BBox& b : gts) {
            b = translate(b, padded.offset_x, padded.offset_y);
          }
        }

        const auto placements =
            plan_placements(gts, result.patch.side, config.patch_scale,
                            padded.image.height, padded.image.width);

        LossSpec spec;
        spec.kind = config.loss_kind;
        spec.top_k = static_cast<std::size_t>(config.top_k);
        spec.lambda_tv = 0.0;  // the TV term is added once per batch
        spec.iou_epsilon = config.loss_iou_epsilon;
        spec.person_class = config.person_class;
        spec.gt_max = largest_gt_box(gts);
        spec.random_select_seed = topk_rng.next();

        const LossGradientResult res = loss_gradient(
            detector, padded.image, placements, applied_patch, spec);
        batch_adv.push_back(res.loss.adv);
        for (std::size_t p = 0; p < n_pixels; ++p) {
          grad[p] += res.patch_gradient[p];
        }
      }

      const double inv_batch = 1.0 / static_cast<double>(batch_n);
      for (double& g : grad) g *= inv_batch;
      if (cutout_active) {
        // d(applied)/d(patch) is zero inside the cut window.
        for (int y = cut.y0; y < cut.y1; ++y) {
          for (int x = cut.x0; x < cut.x1; ++x) {
            for (int c = 0; c < kChannels; ++c) {
              grad[(static_cast<std::size_t>(y) * result.patch.side + x) *
                       kChannels +
                   c] = 0.0;
            }
          }
        }
      }

      const double tv = tv_loss(result.patch);
      LossBreakdown batch_loss =
          total_loss(std::move(batch_adv), tv, config.lambda_tv);
      if (!std::isfinite(batch_loss.total)) {
        throw std::runtime_error("train_patch: loss diverged (non-finite) at epoch " +
                                 std::to_string(epoch));
      }
      if (config.lambda_tv != 0.0) {
        const auto tv_grad = tv_loss_gradient(result.patch);
        for (std::size_t p = 0; p < n_pixels; ++p) {
          grad[p] += config.lambda_tv * tv_grad[p];
        }
      }

      ++adam_t;
      const double bc1 = 1.0 - std::pow(config.adam_beta1, adam_t);
      const double bc2 = 1.0 - std::pow(config.adam_beta2, adam_t);
      for (std::size_t p = 0; p < n_pixels; ++p) {
        adam_m[p] = config.adam_beta1 * adam_m[p] +
                    (1.0 - config.adam_beta1) * grad[p];
        adam_v[p] = config.adam_beta2 * adam_v[p] +
                    (1.0 - config.adam_beta2) * grad[p] * grad[p];
        const double m_hat = adam_m[p] / bc1;
        const double v_hat = adam_v[p] / bc2;
        result.patch.pixels[p] -=
            lr * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
      }
      result.patch.clamp_unit();

      epoch_adv_sum += batch_loss.adv * static_cast<double>(batch_n);
      epoch_tv_sum += batch_loss.tv;
      epoch_images += batch_n;
      ++epoch_batches;
    }

    const double epoch_adv = epoch_adv_sum / static_cast<double>(epoch_images);
    const double epoch_tv = epoch_tv_sum / static_cast<double>(epoch_batches);
    const double epoch_total = epoch_adv + config.lambda_tv * epoch_tv;
    result.log.push_back({epoch, epoch_adv, epoch_tv, epoch_total, lr});

    if (epoch_total < best_total) {
      best_total = epoch_total;
      epochs_since_improvement = 0;
    } else {
      ++epochs_since_improvement;
      if (epochs_since_improvement >= config.plateau_patience) {
        lr *= config.plateau_factor;
        epochs_since_improvement = 0;
      }
    }
  }
  return result;
}

MetricsReport evaluate_patch(const Detector& detector,
                             const FilteredDataset& dataset,
                             const Patch& patch, const AttackConfig& config,
                             bool apply, const std::string& patch_label) {
  if (dataset.images.empty()) {
    throw std::invalid_argument("evaluate_patch: no images after filtering");
  }

  MetricsReport report;
  report.detector = detector.info().name;
  report.dataset = dataset.dataset_root;
  report.patch = patch_label;

  std::vector<EvalInstance> instances;
  std::vector<int> flags;
  std::size_t total_tp = 0;
  std::size_t total_gt = 0;

  for (const FilteredImage& fi : dataset.images) {
    ImageGrid evaluated;
    if (apply) {
      const auto placements =
          plan_placements(fi.gt_boxes, patch.side, config.patch_scale,
                          fi.image.height, fi.image.width);
      evaluated = apply_patch(fi.image, placements, patch);
    } else {
      evaluated = fi.image;
    }

    const auto raw = detector.detect_raw(evaluated);
    const auto dets =
        nms(raw, config.conf_threshold, config.nms_iou_threshold);
    std::vector<Detection> person_dets;
    for (const Detection& d : dets) {
      if (d.class_id == config.person_class) person_dets.push_back(d);
    }

    const int flag = image_attack_success(fi.gt_boxes, person_dets);
    flags.push_back(flag);
    const MatchResult match =
        match_detections(person_dets, fi.gt_boxes, 0.5, config.person_class);
    total_tp += match.tp_count();
    total_gt += fi.gt_boxes.size();

    report.per_image.push_back({fi.entry.id, flag == 1, fi.gt_boxes.size(),
                                person_dets.size()});
    instances.push_back({std::move(person_dets), fi.gt_boxes});
  }

  report.pasr = pasr(flags);
  report.map = average_precision(instances, 0.5, config.person_class);
  report.asr = asr(total_tp, total_gt);
  report.image_count = dataset.images.size();
  return report;
}

namespace {

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += "\"\"";
    else quoted += c;
  }
  quoted += '"';
  return quoted;
}

}  // namespace

void write_report_csv(const MetricsReport& report,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path.string());
  out << "detector,dataset,patch,pasr,map,asr,images\n";
  out << csv_quote(report.detector) << ',' << csv_quote(report.dataset) << ','
      << csv_quote(report.patch) << ',' << format_double(report.pasr) << ','
      << format_double(report.map) << ',' << format_double(report.asr) << ','
      << report.image_count << '\n';
  if (!out) throw std::runtime_error("failed writing report: " + path.string());
}

void write_report_json(const MetricsReport& report,
                       const std::filesystem::path& path) {
  json doc;
  doc["detector"] = report.detector;
  doc["dataset"] = report.dataset;
  doc["patch"] = report.patch;
  doc["pasr"] = report.pasr;
  doc["map"] = report.map;
  doc["asr"] = report.asr;
  doc["images"] = report.image_count;
  doc["per_image"] = json::array();
  for (const auto& pi : report.per_image) {
    doc["per_image"].push_back({{"id", pi.id},
                                {"attack_success", pi.attack_success},
                                {"gt_count", pi.gt_count},
                                {"detection_count", pi.detection_count}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing report: " + path.string());
}

void write_training_log(const std::vector<TrainingLogRow>& log,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log: " + path.string());
  out << "epoch,adv_loss,tv_loss,total_loss,learning_rate\n";
  for (const auto& row : log) {
    out << row.epoch << ',' << format_double(row.adv_loss) << ','
        << format_double(row.tv_loss) << ',' << format_double(row.total_loss)
        << ',' << format_double(row.learning_rate) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing training log: " + path.string());
}

}  // namespace patchforge
