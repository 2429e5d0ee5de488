#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/png_io.hpp"

namespace roadseg {

struct TrainConfig {
  double initial_lr = 1e-4;
  double plateau_factor = 0.5;
  /// Validation loss must drop by more than this to count as improvement.
  double plateau_min_delta = 0.0002;
  int plateau_patience = 5;
  int batch_size = 8;
  int max_epochs = 100;
  double val_ratio = 0.2;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;
  double loss_epsilon = 1.0;
  /// Windows drawn per epoch when training the window classifier.
  int windows_per_epoch = 2048;
  int val_windows = 512;

  void validate() const {
    if (!(initial_lr > 0.0)) throw std::invalid_argument("initial_lr must be > 0");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
      throw std::invalid_argument("plateau_factor must be in (0,1)");
    }
    if (plateau_min_delta < 0.0) throw std::invalid_argument("plateau_min_delta must be >= 0");
    if (plateau_patience < 1) throw std::invalid_argument("plateau_patience must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
    if (!(val_ratio > 0.0 && val_ratio < 1.0)) throw std::invalid_argument("val_ratio must be in (0,1)");
    if (loss_epsilon < 0.0) throw std::invalid_argument("loss_epsilon must be >= 0");
    if (windows_per_epoch < 1 || val_windows < 1) {
      throw std::invalid_argument("window counts must be >= 1");
    }
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_f1 = 0.0;
  double val_iou = 0.0;
  /// Learning rate used during this epoch.
  double learning_rate = 0.0;
  double wall_time = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }

  double best_val_loss() const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : records) best = std::min(best, r.val_loss);
    return best;
  }
};

/// Reduce-on-plateau: after `patience` consecutive epochs without a
/// validation-loss improvement larger than `min_delta`, the rate is
/// multiplied by `factor` and the counter restarts.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(const TrainConfig& cfg)
      : lr_(cfg.initial_lr), factor_(cfg.plateau_factor), min_delta_(cfg.plateau_min_delta),
        patience_(cfg.plateau_patience) {}

  double lr() const { return lr_; }
  int wait() const { return wait_; }

  /// Consumes one epoch's validation loss; returns the rate for the next epoch.
  double step(double val_loss) {
    if (val_loss < best_ - min_delta_) {
      best_ = val_loss;
      wait_ = 0;
    } else if (++wait_ >= patience_) {
      lr_ *= factor_;
      wait_ = 0;
    }
    return lr_;
  }

 private:
  double lr_;
  double factor_;
  double min_delta_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int wait_ = 0;
};

/// Learning rate for the epoch following `history`, obtained by replaying
/// the recorded validation losses through the plateau rule.
inline double lr_plateau_update(const TrainHistory& history, const TrainConfig& cfg) {
  PlateauScheduler s(cfg);
  for (const auto& r : history.records) s.step(r.val_loss);
  return s.lr();
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// Comma-separated history: epoch,train_loss,val_loss,val_f1,val_iou,lr.
inline void write_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write history '" + path.string() + "'");
  out << "epoch,train_loss,val_loss,val_f1,val_iou,lr\n";
  for (const auto& r : h.records) {
    out << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.val_loss) << ','
        << format_number(r.val_f1) << ',' << format_number(r.val_iou) << ','
        << format_number(r.learning_rate) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing history '" + path.string() + "'");
}

namespace detail {

inline void draw_line(RasterImage& img, double x0, double y0, double x1, double y1,
                      const float (&rgb)[3], int thickness = 2) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const int cx = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    const int cy = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    for (int dy = 0; dy < thickness; ++dy) {
      for (int dx = 0; dx < thickness; ++dx) {
        const int x = cx + dx, y = cy + dy;
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
      }
    }
  }
}

}  // namespace detail

/// Renders train (blue) and validation (red) loss against epoch.
inline RasterImage render_loss_curve(const TrainHistory& h, int width = 640, int height = 400) {
  RasterImage img(height, width, 3, 1.0f);
  const int left = 40, right = width - 20, top = 20, bottom = height - 30;
  const float axis[3] = {0.0f, 0.0f, 0.0f};
  const float grid[3] = {0.85f, 0.85f, 0.85f};
  for (int k = 1; k < 4; ++k) {
    const double y = top + (bottom - top) * k / 4.0;
    detail::draw_line(img, left, y, right, y, grid, 1);
  }
  detail::draw_line(img, left, top, left, bottom, axis);
  detail::draw_line(img, left, bottom, right, bottom, axis);
  if (h.records.empty()) return img;
  double ymax = 0.0;
  for (const auto& r : h.records) ymax = std::max({ymax, r.train_loss, r.val_loss});
  if (!(ymax > 0.0) || !std::isfinite(ymax)) ymax = 1.0;
  const double n = static_cast<double>(std::max<std::size_t>(h.records.size() - 1, 1));
  auto px = [&](std::size_t i) { return left + (right - left) * static_cast<double>(i) / n; };
  auto py = [&](double v) { return bottom - (bottom - top) * std::clamp(v / ymax, 0.0, 1.0); };
  const float train_rgb[3] = {0.1f, 0.3f, 0.9f};
  const float val_rgb[3] = {0.9f, 0.15f, 0.1f};
  for (std::size_t i = 0; i < h.records.size(); ++i) {
    const std::size_t j = i + 1 < h.records.size() ? i + 1 : i;
    detail::draw_line(img, px(i), py(h.records[i].train_loss), px(j), py(h.records[j].train_loss), train_rgb);
    detail::draw_line(img, px(i), py(h.records[i].val_loss), px(j), py(h.records[j].val_loss), val_rgb);
  }
  return img;
}

inline void write_loss_curve(const TrainHistory& h, const std::filesystem::path& path) {
  png::write_rgb(path, render_loss_curve(h));
}

}  // namespace roadseg
