// patchforge CLI: train adversarial patches against person detectors,
// evaluate them under PASR/mAP/ASR, compute metrics from detection-exchange
// files, and demonstrate the overestimation scenarios.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "patchforge/detectors.hpp"
#include "patchforge/image_io.hpp"
#include "patchforge/metrics.hpp"
#include "patchforge/pipeline.hpp"

namespace pf = patchforge;

namespace {

// Exit codes: 0 success, 64 usage error, 65 input error, 70 runtime failure.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 64;
constexpr int kExitInput = 65;
constexpr int kExitRuntime = 70;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runs an input-loading stage; any failure there is an input error, not a
// runtime failure.
template <typename F>
auto input_stage(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InputError&) {
    throw;
  } catch (const std::exception& e) {
    throw InputError(e.what());
  }
}

std::string config_defaults_help() {
  const pf::AttackConfig d;
  std::ostringstream out;
  out << "Config file keys and defaults (flags override file values, file "
         "values override defaults):\n"
      << "  epochs=" << d.epochs << "  learning_rate="
      << pf::format_double(d.learning_rate) << "  lambda_tv="
      << pf::format_double(d.lambda_tv) << "  top_k=" << d.top_k << "\n"
      << "  pspp_probability=" << pf::format_double(d.pspp_probability)
      << "  pspp_target=" << d.pspp_target_w << "x" << d.pspp_target_h
      << "  pspp_fill=" << pf::format_double(d.pspp_fill) << "\n"
      << "  batch_size=" << d.batch_size << "  patch_side=" << d.patch_side
      << "  patch_scale=" << pf::format_double(d.patch_scale)
      << "  patch_init=" << d.patch_init << "\n"
      << "  loss_kind=" << pf::to_string(d.loss_kind)
      << "  conf_threshold=" << pf::format_double(d.conf_threshold)
      << "  nms_iou_threshold=" << pf::format_double(d.nms_iou_threshold)
      << "  seed=" << d.seed << "\n"
      << "  cutout_probability=" << pf::format_double(d.cutout_probability)
      << "  cutout_fraction=" << pf::format_double(d.cutout_fraction)
      << "  person_class=" << d.person_class << "  loss_iou_epsilon="
      << pf::format_double(d.loss_iou_epsilon) << "\n"
      << "  plateau_patience=" << d.plateau_patience << "  plateau_factor="
      << pf::format_double(d.plateau_factor) << "\n";
  return out.str();
}

// Shared option state for train/eval. Each CLI flag lands in the config via
// apply_config_entry so the precedence chain has a single code path.
struct CommonOptions {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;

  void add_flag(CLI::App* cmd, const std::string& flag, const std::string& key,
                const std::string& help) {
    cmd->add_option_function<std::string>(
        flag,
        [this, key](const std::string& v) { overrides.emplace_back(key, v); },
        help);
  }

  pf::AttackConfig resolve() const {
    pf::AttackConfig config;
    if (!config_file.empty()) {
      config = input_stage([&] { return pf::load_config_file(config_file); });
    }
    for (const auto& [key, value] : overrides) {
      pf::apply_config_entry(config, key, value);
    }
    config.validate();
    return config;
  }
};

std::unique_ptr<pf::Detector> make_detector(const std::string& name) {
  if (name == "toy") {
    return pf::make_toy_detector(pf::ToyDetectorParams{});
  }
  throw InputError("unknown detector '" + name +
                   "' (built in: toy; external detectors are evaluated via "
                   "detection-exchange files with the metrics subcommand)");
}

std::filesystem::path training_log_path(const std::filesystem::path& out) {
  std::filesystem::path p = out;
  p.replace_extension();
  p += ".log.csv";
  return p;
}

int run_train(const std::string& detector_name, const std::string& data_dir,
              const std::string& out_path, const CommonOptions& common) {
  const pf::AttackConfig config = common.resolve();
  const auto detector = make_detector(detector_name);
  const auto manifest =
      input_stage([&] { return pf::load_or_scan_dataset(data_dir); });
  const auto dataset = input_stage([&] {
    return pf::filter_person_images(*detector, manifest, config.conf_threshold,
                                    config.nms_iou_threshold, true,
                                    config.person_class);
  });
  if (dataset.images.empty()) {
    throw InputError("no image with a detected person; nothing to train on");
  }
  std::cout << "training on " << dataset.images.size() << " image(s), "
            << config.epochs << " epoch(s)\n";

  const pf::TrainingResult result = pf::train_patch(config, *detector, dataset);
  pf::save_patch_png(result.patch, out_path);
  const auto log_path = training_log_path(out_path);
  pf::write_training_log(result.log, log_path);
  std::cout << "patch written to " << out_path << "\n"
            << "training log written to " << log_path.string() << "\n";
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    std::cout << "final losses: adv=" << pf::format_double(last.adv_loss)
              << " tv=" << pf::format_double(last.tv_loss)
              << " total=" << pf::format_double(last.total_loss) << "\n";
  }
  return kExitOk;
}

int run_eval(const std::string& detector_name, const std::string& data_dir,
             const std::string& patch_path, const std::string& report_path,
             const CommonOptions& common) {
  const pf::AttackConfig config = common.resolve();
  const auto detector = make_detector(detector_name);
  const pf::Patch patch =
      input_stage([&] { return pf::load_patch_png(patch_path); });
  const auto manifest =
      input_stage([&] { return pf::load_or_scan_dataset(data_dir); });
  const auto dataset = input_stage([&] {
    return pf::filter_person_images(*detector, manifest, config.conf_threshold,
                                    config.nms_iou_threshold, true,
                                    config.person_class);
  });
  if (dataset.images.empty()) {
    throw InputError("no image with a detected person; nothing to evaluate");
  }

  const pf::MetricsReport report =
      pf::evaluate_patch(*detector, dataset, patch, config, true,
                         std::filesystem::path(patch_path).filename().string());
  std::cout << "pasr=" << pf::format_double(report.pasr)
            << " map=" << pf::format_double(report.map)
            << " asr=" << pf::format_double(report.asr)
            << " images=" << report.image_count << "\n";

  if (!report_path.empty()) {
    std::filesystem::path csv = report_path;
    std::filesystem::path json_path = csv;
    json_path.replace_extension(".json");
    pf::write_report_csv(report, csv);
    pf::write_report_json(report, json_path);
    std::cout << "report written to " << csv.string() << " and "
              << json_path.string() << "\n";
  }
  return kExitOk;
}

// Post-processes one exchange file into per-image person detections.
std::map<std::string, std::vector<pf::Detection>> postprocess_exchange(
    const pf::DetectionExchange& exchange,
    const std::optional<double>& conf_override,
    const std::optional<double>& nms_override, int person_class) {
  const double conf = conf_override.value_or(exchange.conf_threshold);
  const double nms_iou = nms_override.value_or(exchange.nms_iou_threshold);
  std::map<std::string, std::vector<pf::Detection>> out;
  for (const auto& img : exchange.images) {
    std::vector<pf::Detection> person;
    for (const auto& det : pf::nms(img.detections, conf, nms_iou)) {
      if (det.class_id == person_class) person.push_back(det);
    }
    out[img.id] = std::move(person);
  }
  return out;
}

int run_metrics(const std::string& pred_path, const std::string& gt_path,
                const std::string& report_path,
                const std::optional<double>& conf_override,
                const std::optional<double>& nms_override) {
  const auto pred_exchange =
      input_stage([&] { return pf::read_detection_exchange(pred_path); });
  const auto gt_exchange =
      input_stage([&] { return pf::read_detection_exchange(gt_path); });

  const auto preds = postprocess_exchange(pred_exchange, conf_override,
                                          nms_override, pf::kPersonClass);
  const auto gts = postprocess_exchange(gt_exchange, conf_override,
                                        nms_override, pf::kPersonClass);

  pf::MetricsReport report;
  report.detector = pred_exchange.detector;
  report.dataset = gt_path;
  report.patch = pred_path;

  std::vector<pf::EvalInstance> instances;
  std::vector<int> flags;
  std::size_t total_tp = 0;
  std::size_t total_gt = 0;
  for (const auto& [id, gt_dets] : gts) {
    if (gt_dets.empty()) continue;  // no person: filtered out
    std::vector<pf::BBox> gt_boxes;
    for (const auto& d : gt_dets) gt_boxes.push_back(d.box);

    const auto it = preds.find(id);
    const std::vector<pf::Detection> pred_dets =
        it != preds.end() ? it->second : std::vector<pf::Detection>{};

    const int flag = pf::image_attack_success(gt_boxes, pred_dets);
    flags.push_back(flag);
    total_tp += pf::match_detections(pred_dets, gt_boxes).tp_count();
    total_gt += gt_boxes.size();
    report.per_image.push_back(
        {id, flag == 1, gt_boxes.size(), pred_dets.size()});
    instances.push_back({pred_dets, std::move(gt_boxes)});
  }
  if (flags.empty()) {
    throw InputError(
        "metrics: the GT exchange contains no image with person detections");
  }

  report.pasr = pf::pasr(flags);
  report.map = pf::average_precision(instances);
  report.asr = pf::asr(total_tp, total_gt);
  report.image_count = flags.size();

  std::cout << "pasr=" << pf::format_double(report.pasr)
            << " map=" << pf::format_double(report.map)
            << " asr=" << pf::format_double(report.asr)
            << " images=" << report.image_count << "\n";
  if (!report_path.empty()) {
    std::filesystem::path csv = report_path;
    std::filesystem::path json_path = csv;
    json_path.replace_extension(".json");
    pf::write_report_csv(report, csv);
    pf::write_report_json(report, json_path);
    std::cout << "report written to " << csv.string() << " and "
              << json_path.string() << "\n";
  }
  return kExitOk;
}

int run_streak(const std::string& flags_path, double fps) {
  std::vector<int> flags = input_stage([&] {
    std::ifstream in(flags_path);
    if (!in) {
      throw std::runtime_error("cannot open flag file: " + flags_path);
    }
    std::vector<int> out;
    std::string token;
    while (in >> token) {
      if (token[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      if (token == "0") out.push_back(0);
      else if (token == "1") out.push_back(1);
      else {
        throw std::runtime_error("flag file: expected 0 or 1, got '" + token +
                                 "'");
      }
    }
    return out;
  });

  const pf::MissStreak streak = pf::longest_miss_streak(flags, fps);
  std::printf("longest miss streak: %zu frames (%.2f s) at %s fps over %zu frames\n",
              streak.frames, streak.seconds, pf::format_double(fps).c_str(),
              flags.size());
  return kExitOk;
}

int run_demo_figure1() {
  struct Row {
    const char* name;
    pf::EvalInstance instance;
  };
  const Row rows[] = {
      {"fragmented-boxes", pf::scenarios::fragmented_boxes()},
      {"below-threshold-match", pf::scenarios::below_threshold_match()},
      {"full-disappearance", pf::scenarios::full_disappearance()},
  };
  std::printf("%-24s %6s %6s %6s\n", "scenario", "mAP", "ASR", "PASR");
  for (const Row& row : rows) {
    const auto& inst = row.instance;
    const double map = pf::average_precision({inst});
    const auto match = pf::match_detections(inst.detections, inst.gt_boxes);
    const double asr_v = pf::asr(match.tp_count(), inst.gt_boxes.size());
    const double pasr_v =
        pf::image_attack_success(inst.gt_boxes, inst.detections);
    std::printf("%-24s %6.2f %6.2f %6.2f\n", row.name, map, asr_v, pasr_v);
  }
  std::printf(
      "\nBoth overestimation scenarios score mAP 0 and ASR 1 even though the "
      "person is still detected;\nonly the zero-overlap image-level rate "
      "(PASR) separates them from true disappearance.\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "patchforge: adversarial patch training and practical evaluation "
      "against person detectors"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Optimize a patch on a dataset");
  std::string train_detector = "toy";
  std::string train_data;
  std::string train_out;
  CommonOptions train_common;
  train->add_option("--detector", train_detector, "Detector name (built in: toy)");
  train->add_option("--data", train_data, "Dataset directory (PNG/JPEG images)")
      ->required();
  train->add_option("--out", train_out, "Output patch PNG path")->required();
  train->add_option("--config", train_common.config_file,
                    "Flat key=value config file");
  train_common.add_flag(train, "--seed", "seed", "Root seed for all randomness");
  train_common.add_flag(train, "--epochs", "epochs", "Training epochs");
  train_common.add_flag(train, "--lr", "learning_rate", "Learning rate");
  train_common.add_flag(train, "--tv-weight", "lambda_tv",
                        "Total-variation loss weight");
  train_common.add_flag(train, "--topk", "top_k", "Top-k candidate selection");
  train_common.add_flag(train, "--loss", "loss_kind",
                        "Loss kind: lcsl obj cls obj_cls iou_only cls_iou obj_iou");
  train_common.add_flag(train, "--pspp-prob", "pspp_probability",
                        "High-resolution padding probability");
  train_common.add_flag(train, "--pspp-size", "pspp_target",
                        "Padding target as WxH");
  train_common.add_flag(train, "--patch-scale", "patch_scale",
                        "Patch side relative to sqrt(box area)");
  train_common.add_flag(train, "--patch-side", "patch_side",
                        "Patch resolution in pixels");
  train_common.add_flag(train, "--conf-threshold", "conf_threshold",
                        "Detection confidence threshold");
  train_common.add_flag(train, "--nms-iou", "nms_iou_threshold",
                        "NMS IoU threshold");
  train->footer(config_defaults_help());

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a patch PNG on a dataset");
  std::string eval_detector = "toy";
  std::string eval_data;
  std::string eval_patch;
  std::string eval_report;
  CommonOptions eval_common;
  eval->add_option("--detector", eval_detector, "Detector name (built in: toy)");
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--patch", eval_patch, "Patch PNG to evaluate")->required();
  eval->add_option("--report", eval_report,
                   "Report CSV path (a .json mirror is written alongside)");
  eval->add_option("--config", eval_common.config_file,
                   "Flat key=value config file");
  eval_common.add_flag(eval, "--seed", "seed", "Root seed");
  eval_common.add_flag(eval, "--patch-scale", "patch_scale",
                       "Patch side relative to sqrt(box area)");
  eval_common.add_flag(eval, "--conf-threshold", "conf_threshold",
                       "Detection confidence threshold");
  eval_common.add_flag(eval, "--nms-iou", "nms_iou_threshold",
                       "NMS IoU threshold");
  eval->footer(config_defaults_help());

  // metrics
  auto* metrics = app.add_subcommand(
      "metrics", "Compute AP/ASR/PASR from a detection-exchange file pair");
  std::string metrics_pred;
  std::string metrics_gt;
  std::string metrics_report;
  std::optional<double> metrics_conf;
  std::optional<double> metrics_nms;
  metrics->add_option("predictions", metrics_pred,
                      "Exchange JSON with the evaluated detections")
      ->required();
  metrics->add_option("ground-truth", metrics_gt,
                      "Exchange JSON defining the GT (clean detections)")
      ->required();
  metrics->add_option("--report", metrics_report, "Report CSV path");
  metrics->add_option("--conf-threshold", metrics_conf,
                      "Override the files' confidence threshold");
  metrics->add_option("--nms-iou", metrics_nms,
                      "Override the files' NMS IoU threshold");

  // streak
  auto* streak = app.add_subcommand(
      "streak", "Longest undetected run from a per-frame 0/1 flag file");
  std::string streak_file;
  double streak_fps = 30.0;
  streak->add_option("flags", streak_file, "File of 0/1 frame flags")
      ->required();
  streak->add_option("--fps", streak_fps, "Frames per second (default 30)");

  // demo-figure1
  app.add_subcommand("demo-figure1",
                     "Print the overestimation scenarios' mAP/ASR/PASR");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) {
      return run_train(train_detector, train_data, train_out, train_common);
    }
    if (eval->parsed()) {
      return run_eval(eval_detector, eval_data, eval_patch, eval_report,
                      eval_common);
    }
    if (metrics->parsed()) {
      return run_metrics(metrics_pred, metrics_gt, metrics_report,
                         metrics_conf, metrics_nms);
    }
    if (streak->parsed()) {
      return run_streak(streak_file, streak_fps);
    }
    return run_demo_figure1();
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
