#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "roadseg/dataset.hpp"
#include "roadseg/inference.hpp"
#include "roadseg/objectives.hpp"
#include "roadseg/synthetic.hpp"
#include "roadseg/training/checkpoint.hpp"
#include "roadseg/training/trainer.hpp"

namespace roadseg::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kOutputRootEnv = "ROADSEG_OUTPUT_ROOT";

/// Invalid or inconsistent configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Command { make_synthetic, make_patches, train, predict, evaluate };

struct RunConfig {
  fs::path config_file;
  fs::path output_dir = "runs";
  std::uint64_t seed = 0;

  // make-synthetic
  int synthetic_count = 100;
  int synthetic_size = 400;

  // data
  fs::path image_dir;
  fs::path mask_dir;
  /// Output of make-patches (images/, masks/); used by train when set.
  fs::path patch_dir;
  int patch_size = 256;
  int patch_stride = 72;

  // model and training
  std::string variant = "unet-dilated";
  /// 0 keeps the variant's default width.
  int first_layer_channels = 0;
  bool augment = true;
  AugmentParams augmentation;
  TrainConfig train;
  fs::path resume;

  // predict
  EnsembleSpec ensemble;
  fs::path test_dir;
  bool overlays = true;
  bool probabilities = false;

  // evaluate
  fs::path prediction;
  fs::path truth_dir;

  void validate(Command cmd) const;
  ModelSpec model_spec() const;
  TrainConfig train_config() const;
};

namespace detail {

inline void require_dir(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string(key) + " is not set");
  if (!fs::is_directory(p)) {
    throw ConfigError(std::string(key) + " '" + p.string() + "' is not a directory");
  }
}

inline void require_file(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string(key) + " is not set");
  if (!fs::is_regular_file(p)) throw ConfigError(std::string(key) + " '" + p.string() + "' does not exist");
}

/// Trailing decimal digits of a file stem ("test_7" -> 7), if any.
inline std::optional<int> trailing_number(const std::string& stem) {
  std::size_t i = stem.size();
  while (i > 0 && std::isdigit(static_cast<unsigned char>(stem[i - 1]))) --i;
  if (i == stem.size() || stem.size() - i > 9) return std::nullopt;
  return std::stoi(stem.substr(i));
}

inline std::vector<fs::path> list_png(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

/// Submission image numbers: trailing digits of the stem, else 1-based position.
inline std::vector<int> image_numbers(const std::vector<fs::path>& files) {
  std::vector<int> out;
  std::set<int> seen;
  bool numeric = true;
  for (const auto& f : files) {
    auto n = trailing_number(f.stem().string());
    if (!n || !seen.insert(*n).second) {
      numeric = false;
      break;
    }
    out.push_back(*n);
  }
  if (!numeric) {
    out.clear();
    for (std::size_t i = 0; i < files.size(); ++i) out.push_back(static_cast<int>(i) + 1);
  }
  return out;
}

inline void ensure_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory '" + dir.string() + "'");
  }
}

/// Copies the config file byte-for-byte into `out_dir` and writes the fully
/// resolved settings next to it.
inline void echo_config(const RunConfig& cfg, const std::string& resolved) {
  ensure_output_dir(cfg.output_dir);
  if (!cfg.config_file.empty()) {
    const fs::path dst = cfg.output_dir / ("config" + cfg.config_file.extension().string());
    std::error_code ec;
    if (!fs::exists(dst) || !fs::equivalent(cfg.config_file, dst, ec)) {
      fs::copy_file(cfg.config_file, dst, fs::copy_options::overwrite_existing);
    }
  }
  if (!resolved.empty()) {
    std::ofstream(cfg.output_dir / "resolved_config.ini", std::ios::binary) << resolved;
  }
}

}  // namespace detail

inline void RunConfig::validate(Command cmd) const {
  if (output_dir.empty()) throw ConfigError("output_dir is not set");
  switch (cmd) {
    case Command::make_synthetic:
      if (synthetic_count < 1) throw ConfigError("count must be >= 1");
      if (synthetic_size < 16) throw ConfigError("size must be >= 16");
      break;
    case Command::make_patches:
      detail::require_dir(image_dir, "image_dir");
      detail::require_dir(mask_dir, "mask_dir");
      if (patch_size < 1 || patch_stride < 1) throw ConfigError("patch_size and patch_stride must be >= 1");
      break;
    case Command::train:
      if (!patch_dir.empty()) {
        detail::require_dir(patch_dir / "images", "patch_dir/images");
        detail::require_dir(patch_dir / "masks", "patch_dir/masks");
      } else {
        detail::require_dir(image_dir, "image_dir");
        detail::require_dir(mask_dir, "mask_dir");
      }
      if (!resume.empty()) detail::require_file(resume, "resume");
      try {
        model_spec().validate();
        train_config().validate();
        if (augment) augmentation.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      break;
    case Command::predict:
      detail::require_dir(test_dir, "test_dir");
      if (ensemble.member_checkpoints.empty()) throw ConfigError("no checkpoint given");
      for (const auto& c : ensemble.member_checkpoints) detail::require_file(c, "checkpoint");
      try {
        ensemble.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      break;
    case Command::evaluate:
      if (prediction.empty()) throw ConfigError("prediction is not set");
      if (!fs::exists(prediction)) throw ConfigError("prediction '" + prediction.string() + "' does not exist");
      detail::require_dir(truth_dir, "truth_dir");
      break;
  }
}

inline ModelSpec RunConfig::model_spec() const {
  ModelSpec spec;
  try {
    spec = spec_for(variant);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (first_layer_channels > 0) spec.first_layer_channels = first_layer_channels;
  spec.seed = seed;
  return spec;
}

inline TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

// ---------------------------------------------------------------------------
// Commands

struct MakeSyntheticResult {
  std::size_t pairs = 0;
};

/// Writes `count` generated image/mask pairs to output_dir/{images,masks}.
inline MakeSyntheticResult cmd_make_synthetic(const RunConfig& cfg, std::ostream& log = std::cout) {
  cfg.validate(Command::make_synthetic);
  const fs::path images = cfg.output_dir / "images";
  const fs::path masks = cfg.output_dir / "masks";
  detail::ensure_output_dir(images);
  detail::ensure_output_dir(masks);
  SyntheticOptions opt;
  opt.size = cfg.synthetic_size;
  const auto set = generate_synthetic_set(static_cast<std::size_t>(cfg.synthetic_count), cfg.seed, opt);
  for (const auto& p : set) {
    png::write_rgb(images / (p.source_id + ".png"), p.image);
    png::write_mask(masks / (p.source_id + ".png"), p.mask);
  }
  log << "wrote " << set.size() << " synthetic pairs to " << cfg.output_dir.string() << "\n";
  return {set.size()};
}

struct MakePatchesResult {
  std::size_t sources = 0;
  std::size_t patches = 0;
  fs::path manifest;
};

/// Cuts every pair into overlapping patches and writes
/// output_dir/{images,masks}/<patch_id>.png plus manifest.csv.
inline MakePatchesResult cmd_make_patches(const RunConfig& cfg, std::ostream& log = std::cout) {
  cfg.validate(Command::make_patches);
  const auto pairs = load_pairs(cfg.image_dir, cfg.mask_dir);
  const fs::path images = cfg.output_dir / "images";
  const fs::path masks = cfg.output_dir / "masks";
  detail::ensure_output_dir(images);
  detail::ensure_output_dir(masks);

  MakePatchesResult result;
  result.sources = pairs.size();
  result.manifest = cfg.output_dir / "manifest.csv";
  std::ofstream manifest(result.manifest, std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write '" + result.manifest.string() + "'");
  manifest << "patch_id,source_id,row,col\n";
  for (const auto& pair : pairs) {
    const auto rows = patch_offsets(pair.image.height, cfg.patch_size, cfg.patch_stride);
    const auto cols = patch_offsets(pair.image.width, cfg.patch_size, cfg.patch_stride);
    for (const auto& patch : extract_patches(pair, cfg.patch_size, cfg.patch_stride)) {
      png::write_rgb(images / (patch.source_id + ".png"), patch.image);
      png::write_mask(masks / (patch.source_id + ".png"), patch.mask);
      ++result.patches;
    }
    for (int r : rows) {
      for (int c : cols) {
        manifest << patch_id(pair.source_id, r, c) << ',' << pair.source_id << ',' << r << ',' << c << '\n';
      }
    }
  }
  log << "wrote " << result.patches << " patches from " << result.sources << " images to "
      << cfg.output_dir.string() << "\n";
  return result;
}

struct TrainResult {
  fs::path checkpoint;
  TrainHistory history;
};

inline TrainResult cmd_train(const RunConfig& cfg, std::ostream& log = std::cout) {
  cfg.validate(Command::train);
  const fs::path image_dir = cfg.patch_dir.empty() ? cfg.image_dir : cfg.patch_dir / "images";
  const fs::path mask_dir = cfg.patch_dir.empty() ? cfg.mask_dir : cfg.patch_dir / "masks";
  const auto pairs = load_pairs(image_dir, mask_dir);
  if (pairs.size() < 2) {
    throw std::runtime_error("need at least 2 training pairs, found " + std::to_string(pairs.size()) +
                             " in '" + image_dir.string() + "'");
  }
  const TrainConfig tc = cfg.train_config();
  auto [train_set, val_set] = split_train_val(pairs, tc.val_ratio, tc.seed);

  std::unique_ptr<Model<float>> model;
  TrainHistory history;
  ModelSpec spec = cfg.model_spec();
  if (!cfg.resume.empty()) {
    auto [loaded, meta] = load_checkpoint(cfg.resume);
    if (meta.spec.variant != spec.variant) {
      throw ConfigError("resume checkpoint holds '" + std::string(variant_name(meta.spec.variant)) +
                        "', config asks for '" + cfg.variant + "'");
    }
    model = std::move(loaded);
    spec = meta.spec;
    history = meta.history;
    log << "resuming from epoch " << history.size() << "\n";
  } else {
    model = build_model<float>(spec);
  }
  log << "training " << variant_name(spec.variant) << " (" << model->parameter_count() << " parameters) on "
      << train_set.size() << " pairs, validating on " << val_set.size() << "\n";

  detail::ensure_output_dir(cfg.output_dir);
  const AugmentParams augment = cfg.augment ? cfg.augmentation : AugmentParams::none();
  history = train<float>(*model, train_set, val_set, tc, augment, std::move(history), [&](const EpochRecord& r) {
    log << "epoch " << r.epoch << " train_loss " << format_number(r.train_loss) << " val_loss "
        << format_number(r.val_loss) << " val_f1 " << format_number(r.val_f1) << " lr "
        << format_number(r.learning_rate) << "\n";
    log.flush();
  });

  TrainResult result;
  result.checkpoint = cfg.output_dir / "model.ckpt";
  result.history = history;
  CheckpointMetadata meta;
  meta.spec = spec;
  meta.epoch = static_cast<int>(history.size());
  meta.learning_rate = lr_plateau_update(history, tc);
  meta.history = history;
  save_checkpoint(*model, meta, result.checkpoint);
  write_history_csv(history, cfg.output_dir / "history.csv");
  write_loss_curve(history, cfg.output_dir / "loss_curve.png");
  log << "best val_loss " << format_number(history.best_val_loss()) << "; checkpoint "
      << result.checkpoint.string() << "\n";
  return result;
}

struct PredictResult {
  fs::path submission;
  std::size_t images = 0;
  std::size_t records = 0;
};

/// Averages the members' probability maps per image and writes
/// submission.csv, overlays/<stem>.png and optionally probabilities/<stem>.png.
inline PredictResult cmd_predict(const RunConfig& cfg, std::ostream& log = std::cout,
                                 std::ostream& warn = std::cerr) {
  cfg.validate(Command::predict);
  // Every member must load before any image is touched.
  std::vector<std::unique_ptr<Model<float>>> members;
  for (const auto& path : cfg.ensemble.member_checkpoints) {
    try {
      members.push_back(load_checkpoint(path).first);
    } catch (const std::exception& e) {
      throw std::runtime_error("cannot load checkpoint '" + path.string() + "': " + e.what());
    }
  }
  bool windowed = false;
  for (const auto& m : members) windowed = windowed || m->spec().variant == Variant::sliding_window;
  if (windowed && members.size() > 1) {
    throw ConfigError("a sliding-window checkpoint cannot be ensembled; predict with it alone");
  }

  const auto files = detail::list_png(cfg.test_dir);
  const auto numbers = detail::image_numbers(files);
  detail::ensure_output_dir(cfg.output_dir);
  if (cfg.overlays) detail::ensure_output_dir(cfg.output_dir / "overlays");
  if (cfg.probabilities && !windowed) detail::ensure_output_dir(cfg.output_dir / "probabilities");
  if (files.empty()) warn << "warning: no .png images in '" << cfg.test_dir.string() << "'\n";

  std::vector<SubmissionRecord> records;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const RasterImage image = png::read_rgb(files[i]);
    const std::string stem = files[i].stem().string();
    PatchGrid grid;
    if (windowed) {
      grid = predict_mask_sliding(*members.front(), image);
      if (cfg.overlays) render_overlay(image, grid, cfg.output_dir / "overlays" / (stem + ".png"));
    } else {
      std::vector<ProbabilityMap> maps;
      for (auto& m : members) maps.push_back(predict_mask(*m, image));
      const ProbabilityMap avg = ensemble_average(maps);
      grid = decide_labels(avg, cfg.ensemble);
      if (cfg.overlays) render_overlay(image, grid, cfg.output_dir / "overlays" / (stem + ".png"));
      if (cfg.probabilities) export_probability_png16(avg, cfg.output_dir / "probabilities" / (stem + ".png"));
    }
    const auto recs = records_from_grid(numbers[i], grid);
    records.insert(records.end(), recs.begin(), recs.end());
    log << files[i].filename().string() << ": " << std::count(grid.labels.begin(), grid.labels.end(), 1)
        << "/" << grid.labels.size() << " road chunks\n";
  }
  PredictResult result;
  result.submission = cfg.output_dir / "submission.csv";
  result.images = files.size();
  result.records = records.size();
  write_submission(std::move(records), result.submission);
  log << "wrote " << result.records << " records for " << result.images << " images to "
      << result.submission.string() << "\n";
  return result;
}

struct EvaluationReport {
  std::size_t images = 0;
  /// Pixel metrics are absent when predictions are chunk grids.
  std::optional<double> dice_loss;
  std::optional<double> iou;
  std::optional<double> f1_pixel;
  double f1_patch = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["images"] = images;
    j["dice_loss"] = dice_loss ? nlohmann::json(*dice_loss) : nlohmann::json();
    j["iou"] = iou ? nlohmann::json(*iou) : nlohmann::json();
    j["f1_pixel"] = f1_pixel ? nlohmann::json(*f1_pixel) : nlohmann::json();
    j["f1_patch"] = f1_patch;
    return j;
  }
};

/// Scores predicted masks (a directory of PNGs named like the truth masks)
/// or a submission file against truth masks. Pixel counts are pooled over
/// all images; the dice loss is reported with zero smoothing.
inline EvaluationReport cmd_evaluate(const RunConfig& cfg, std::ostream& log = std::cout) {
  cfg.validate(Command::evaluate);
  const auto truth_files = detail::list_png(cfg.truth_dir);
  EvaluationReport report;
  std::vector<PatchGrid> pred_grids, truth_grids;

  if (fs::is_directory(cfg.prediction)) {
    const auto pred_files = detail::list_png(cfg.prediction);
    std::set<std::string> pred_names, truth_names;
    for (const auto& f : pred_files) pred_names.insert(f.filename().string());
    for (const auto& f : truth_files) truth_names.insert(f.filename().string());
    std::vector<std::string> extra_pred, extra_truth;
    for (const auto& n : pred_names) if (!truth_names.count(n)) extra_pred.push_back(n);
    for (const auto& n : truth_names) if (!pred_names.count(n)) extra_truth.push_back(n);
    if (!extra_pred.empty() || !extra_truth.empty()) {
      std::string msg = "prediction and truth file sets differ;";
      for (const auto& n : extra_pred) msg += " prediction-only: " + n + ";";
      for (const auto& n : extra_truth) msg += " truth-only: " + n + ";";
      msg.pop_back();
      throw std::runtime_error(msg);
    }
    ConfusionCounts pixels;
    for (const auto& f : truth_files) {
      const BinaryMask truth = read_mask(f);
      const BinaryMask pred = read_mask(cfg.prediction / f.filename());
      pixels += confusion(pred, truth);
      pred_grids.push_back(patch_labels(pred));
      truth_grids.push_back(patch_labels(truth));
    }
    report.iou = pixels.iou();
    report.f1_pixel = pixels.f1();
    report.dice_loss = 1.0 - pixels.f1();
  } else {
    const auto records = parse_submission(cfg.prediction);
    std::map<int, std::map<std::pair<int, int>, int>> by_image;
    for (const auto& r : records) by_image[r.image_number][{r.row_offset, r.col_offset}] = r.label;
    const auto numbers = detail::image_numbers(truth_files);
    std::set<int> truth_numbers(numbers.begin(), numbers.end());
    std::string msg;
    for (const auto& [n, cells] : by_image) {
      if (!truth_numbers.count(n)) msg += " prediction-only image " + std::to_string(n) + ";";
    }
    for (std::size_t i = 0; i < truth_files.size(); ++i) {
      if (!by_image.count(numbers[i])) msg += " truth-only: " + truth_files[i].filename().string() + ";";
    }
    if (!msg.empty()) {
      msg.pop_back();
      throw std::runtime_error("prediction and truth file sets differ;" + msg);
    }
    for (std::size_t i = 0; i < truth_files.size(); ++i) {
      PatchGrid truth = patch_labels(read_mask(truth_files[i]));
      PatchGrid pred = truth;
      const auto& cells = by_image[numbers[i]];
      for (int r = 0; r < truth.rows; ++r) {
        for (int c = 0; c < truth.cols; ++c) {
          auto it = cells.find({r * truth.patch_size, c * truth.patch_size});
          if (it == cells.end()) {
            throw std::runtime_error("submission lacks chunk (" + std::to_string(r * truth.patch_size) + ", " +
                                     std::to_string(c * truth.patch_size) + ") of image " +
                                     std::to_string(numbers[i]));
          }
          pred.at(r, c) = static_cast<std::uint8_t>(it->second);
        }
      }
      pred_grids.push_back(std::move(pred));
      truth_grids.push_back(std::move(truth));
    }
  }
  report.images = truth_files.size();
  report.f1_patch = f1_patch(pred_grids, truth_grids);

  detail::ensure_output_dir(cfg.output_dir);
  const std::string text = report.to_json().dump(2);
  std::ofstream(cfg.output_dir / "metrics.json", std::ios::binary) << text << "\n";
  log << text << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// Argument parsing

/// Declares every option. Flags mirror config-file keys: top-level keys
/// configure the program, [train] / [predict] / ... sections the subcommands.
class Parser {
 public:
  explicit Parser(RunConfig& cfg) : app_("Road segmentation with U-Net variants", "roadseg") {
    app_.set_config("--config", "", "INI or TOML config file")->check(CLI::ExistingFile);
    app_.require_subcommand(1);
    app_.fallthrough();
    app_.add_option("--output-dir", cfg.output_dir, "Directory for all outputs")
        ->envname(kOutputRootEnv)
        ->capture_default_str();
    app_.add_option("--seed", cfg.seed, "Seed for every random draw")->capture_default_str();

    auto* synth = app_.add_subcommand("make-synthetic", "Generate a synthetic image/mask dataset");
    synth->add_option("--count", cfg.synthetic_count, "Number of pairs")->capture_default_str();
    synth->add_option("--size", cfg.synthetic_size, "Image side in pixels")->capture_default_str();
    subs_[synth] = Command::make_synthetic;

    auto* patches = app_.add_subcommand("make-patches", "Cut training images into overlapping patches");
    add_data_options(patches, cfg);
    patches->add_option("--patch-size", cfg.patch_size)->capture_default_str();
    patches->add_option("--patch-stride", cfg.patch_stride)->capture_default_str();
    subs_[patches] = Command::make_patches;

    auto* train = app_.add_subcommand("train", "Train one model variant");
    add_data_options(train, cfg);
    train->add_option("--patch-dir", cfg.patch_dir, "Output of make-patches");
    train->add_option("--variant", cfg.variant, "One of: " + variant_list())->capture_default_str();
    train->add_option("--first-layer-channels", cfg.first_layer_channels,
                      "Encoder width at full resolution (0 = variant default)")
        ->capture_default_str();
    TrainConfig& t = cfg.train;
    train->add_option("--lr", t.initial_lr)->capture_default_str();
    train->add_option("--epochs", t.max_epochs)->capture_default_str();
    train->add_option("--batch-size", t.batch_size)->capture_default_str();
    train->add_option("--val-ratio", t.val_ratio)->capture_default_str();
    train->add_option("--plateau-factor", t.plateau_factor)->capture_default_str();
    train->add_option("--plateau-min-delta", t.plateau_min_delta)->capture_default_str();
    train->add_option("--plateau-patience", t.plateau_patience)->capture_default_str();
    train->add_option("--loss-epsilon", t.loss_epsilon)->capture_default_str();
    train->add_option("--windows-per-epoch", t.windows_per_epoch)->capture_default_str();
    train->add_option("--val-windows", t.val_windows)->capture_default_str();
    AugmentParams& a = cfg.augmentation;
    train->add_flag("--augment,!--no-augment", cfg.augment, "Random geometric augmentation")
        ->capture_default_str();
    train->add_option("--rotation-range", a.rotation_range, "Degrees")->capture_default_str();
    train->add_option("--width-shift-range", a.width_shift_range)->capture_default_str();
    train->add_option("--height-shift-range", a.height_shift_range)->capture_default_str();
    train->add_option("--shear-range", a.shear_range, "Degrees")->capture_default_str();
    train->add_option("--zoom-range", a.zoom_range)->capture_default_str();
    train->add_flag("--horizontal-flip", a.horizontal_flip)->capture_default_str();
    train->add_flag("--vertical-flip", a.vertical_flip)->capture_default_str();
    train->add_option("--resume", cfg.resume, "Checkpoint to continue from");
    subs_[train] = Command::train;

    auto* predict = app_.add_subcommand("predict", "Ensemble checkpoints over test images");
    predict->add_option("--checkpoint", cfg.ensemble.member_checkpoints, "Member checkpoint (repeatable)");
    predict->add_option("--test-dir", cfg.test_dir, "Directory of RGB test images");
    predict->add_option("--threshold", cfg.ensemble.decision_threshold,
                        "Chunk is road when its mean probability exceeds this")
        ->capture_default_str();
    predict->add_flag("--overlays,!--no-overlays", cfg.overlays)->capture_default_str();
    predict->add_flag("--probabilities", cfg.probabilities, "Also write 16-bit probability PNGs")
        ->capture_default_str();
    subs_[predict] = Command::predict;

    auto* evaluate = app_.add_subcommand("evaluate", "Score predictions against truth masks");
    evaluate->add_option("--prediction", cfg.prediction, "Directory of predicted masks or a submission file");
    evaluate->add_option("--truth-dir", cfg.truth_dir, "Directory of truth masks");
    subs_[evaluate] = Command::evaluate;
  }

  CLI::App& app() { return app_; }

  Command command() const {
    for (const auto& [sub, cmd] : subs_) {
      if (sub->parsed()) return cmd;
    }
    throw ConfigError("no subcommand given");
  }

 private:
  static void add_data_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--image-dir", cfg.image_dir, "Directory of RGB images");
    sub->add_option("--mask-dir", cfg.mask_dir, "Directory of masks with matching names");
  }

  CLI::App app_;
  std::map<CLI::App*, Command> subs_;
};

/// Parses arguments, runs the chosen command and returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig cfg;
  Parser parser(cfg);
  CLI::App& app = parser.app();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }
  if (auto* opt = app.get_config_ptr(); opt && opt->count() > 0) {
    cfg.config_file = opt->as<std::string>();
  }
  try {
    const Command cmd = parser.command();
    cfg.validate(cmd);
    detail::echo_config(cfg, app.config_to_str(true, false));
    switch (cmd) {
      case Command::make_synthetic: cmd_make_synthetic(cfg, out); break;
      case Command::make_patches: cmd_make_patches(cfg, out); break;
      case Command::train: cmd_train(cfg, out); break;
      case Command::predict: cmd_predict(cfg, out, err); break;
      case Command::evaluate: cmd_evaluate(cfg, out); break;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace roadseg::cli
