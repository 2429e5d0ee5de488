#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/dataset.hpp"
#include "roadseg/models/model.hpp"
#include "roadseg/objectives.hpp"
#include "roadseg/png_io.hpp"

namespace roadseg {

struct EnsembleSpec {
  std::vector<std::filesystem::path> member_checkpoints;
  /// Chunk label = 1 iff the chunk-mean road probability exceeds this.
  double decision_threshold = kPatchThreshold;

  void validate() const {
    if (member_checkpoints.empty()) throw std::invalid_argument("ensemble needs at least one checkpoint");
    if (!(decision_threshold > 0.0 && decision_threshold < 1.0)) {
      throw std::invalid_argument("decision threshold must be in (0,1)");
    }
  }
};

/// Full-resolution eval-mode prediction of a U-Net.
template <typename T>
ProbabilityMap predict_mask(Model<T>& model, const RasterImage& image) {
  if (!is_unet(model.spec().variant)) {
    throw std::invalid_argument("predict_mask needs a U-Net; use predict_mask_sliding for window classifiers");
  }
  Tensor<T> x = to_tensor<T>(image);
  model.check_input(x.shape());
  return to_probability_map(model.forward(x, nn::Mode::eval), 0);
}

/// Classifies every 16x16 chunk from a mirror-padded context window
/// (stride 16); label = road probability > 0.5.
template <typename T>
PatchGrid predict_mask_sliding(Model<T>& model, const RasterImage& image, int batch_size = 64) {
  if (model.spec().variant != Variant::sliding_window) {
    throw std::invalid_argument("predict_mask_sliding needs a window classifier");
  }
  if (image.height % kPatchSize != 0 || image.width % kPatchSize != 0) {
    throw std::invalid_argument("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                " is not divisible by " + std::to_string(kPatchSize));
  }
  const int window = model.spec().window_size;
  const int pad = (window - kPatchSize) / 2;
  if (pad >= image.height || pad >= image.width) {
    throw std::invalid_argument("image smaller than the window context padding");
  }
  PatchGrid grid;
  grid.rows = image.height / kPatchSize;
  grid.cols = image.width / kPatchSize;
  grid.threshold = 0.5;
  grid.labels.assign(static_cast<std::size_t>(grid.rows) * grid.cols, 0);
  const std::size_t total = grid.labels.size();
  for (std::size_t b = 0; b < total; b += batch_size) {
    const std::size_t e = std::min(total, b + static_cast<std::size_t>(batch_size));
    std::vector<RasterImage> windows;
    for (std::size_t k = b; k < e; ++k) {
      const int r = static_cast<int>(k) / grid.cols;
      const int c = static_cast<int>(k) % grid.cols;
      windows.push_back(extract_window(image, r * kPatchSize - pad, c * kPatchSize - pad, window));
    }
    std::vector<const RasterImage*> ptrs;
    for (const auto& w : windows) ptrs.push_back(&w);
    Tensor<T> probs = model.forward(to_tensor<T>(std::span<const RasterImage* const>(ptrs)), nn::Mode::eval);
    for (std::size_t k = b; k < e; ++k) {
      grid.labels[k] = probs.at(static_cast<int>(k - b), 1, 0, 0) > T(0.5) ? 1 : 0;
    }
  }
  return grid;
}

/// Elementwise arithmetic mean of member probability maps.
inline ProbabilityMap ensemble_average(const std::vector<ProbabilityMap>& maps) {
  if (maps.empty()) throw std::invalid_argument("ensemble_average: no maps");
  ProbabilityMap out(maps.front().height, maps.front().width);
  std::vector<double> acc(out.values.size(), 0.0);
  for (const auto& m : maps) {
    require_same_size(m.height, m.width, out.height, out.width, "ensemble_average");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.values[i];
  }
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i] * inv);
  return out;
}

inline PatchGrid decide_labels(const ProbabilityMap& map, double threshold = kPatchThreshold) {
  return patch_labels(map, kPatchSize, threshold);
}

inline PatchGrid decide_labels(const ProbabilityMap& map, const EnsembleSpec& ensemble) {
  return decide_labels(map, ensemble.decision_threshold);
}

// ---------------------------------------------------------------------------
// Submission files

struct SubmissionRecord {
  int image_number = 0;
  int row_offset = 0;
  int col_offset = 0;
  int label = 0;

  friend bool operator==(const SubmissionRecord&, const SubmissionRecord&) = default;
  friend auto operator<=>(const SubmissionRecord& a, const SubmissionRecord& b) {
    return std::tie(a.image_number, a.row_offset, a.col_offset, a.label) <=>
           std::tie(b.image_number, b.row_offset, b.col_offset, b.label);
  }
};

inline std::vector<SubmissionRecord> records_from_grid(int image_number, const PatchGrid& grid) {
  std::vector<SubmissionRecord> out;
  out.reserve(grid.labels.size());
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      out.push_back({image_number, r * grid.patch_size, c * grid.patch_size, grid.at(r, c)});
    }
  }
  return out;
}

inline std::string format_submission_line(const SubmissionRecord& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%03d_%d_%d,%d", r.image_number, r.row_offset, r.col_offset, r.label);
  return buf;
}

/// Writes "id,prediction" then one "NNN_row_col,label" line per record,
/// ordered by (image, row, col), LF line endings.
inline void write_submission(std::vector<SubmissionRecord> records, const std::filesystem::path& path) {
  for (const auto& r : records) {
    if (r.row_offset < 0 || r.col_offset < 0 || (r.label != 0 && r.label != 1) || r.image_number < 0) {
      throw std::invalid_argument("write_submission: invalid record " + format_submission_line(r));
    }
  }
  std::sort(records.begin(), records.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write submission '" + path.string() + "'");
  out << "id,prediction\n";
  for (const auto& r : records) out << format_submission_line(r) << '\n';
  if (!out) throw std::runtime_error("failed writing submission '" + path.string() + "'");
}

inline std::vector<SubmissionRecord> parse_submission(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read submission '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "id,prediction") {
    throw std::runtime_error("submission '" + path.string() + "': missing header");
  }
  std::vector<SubmissionRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    SubmissionRecord r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%d_%d_%d,%d%c", &r.image_number, &r.row_offset, &r.col_offset, &r.label,
                    &tail) != 4) {
      throw std::runtime_error("submission '" + path.string() + "': malformed line " + std::to_string(lineno));
    }
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Visual output

inline constexpr float kOverlayAlpha = 0.5f;

/// Blends a red tint over `image` with per-pixel weight alpha * road.
inline RasterImage make_overlay(const RasterImage& image, std::span<const float> road) {
  if (road.size() != image.plane()) throw std::invalid_argument("render_overlay: shape mismatch");
  if (image.channels != 3) throw std::invalid_argument("render_overlay: expected an RGB image");
  RasterImage out = image;
  const float tint[3] = {1.0f, 0.0f, 0.0f};
  for (int c = 0; c < 3; ++c) {
    float* dst = out.values.data() + c * image.plane();
    for (std::size_t i = 0; i < road.size(); ++i) {
      const float a = kOverlayAlpha * std::clamp(road[i], 0.0f, 1.0f);
      if (a > 0.0f) dst[i] = dst[i] * (1.0f - a) + tint[c] * a;
    }
  }
  return out;
}

inline RasterImage make_overlay(const RasterImage& image, const ProbabilityMap& map) {
  require_same_size(image.height, image.width, map.height, map.width, "render_overlay");
  return make_overlay(image, map.road());
}

inline RasterImage make_overlay(const RasterImage& image, const PatchGrid& grid) {
  if (grid.rows * grid.patch_size != image.height || grid.cols * grid.patch_size != image.width) {
    throw std::invalid_argument("render_overlay: grid does not cover the image");
  }
  std::vector<float> road(image.plane());
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      road[static_cast<std::size_t>(y) * image.width + x] = grid.at(y / grid.patch_size, x / grid.patch_size);
    }
  }
  return make_overlay(image, road);
}

template <typename Prediction>
void render_overlay(const RasterImage& image, const Prediction& prediction, const std::filesystem::path& path) {
  png::write_rgb(path, make_overlay(image, prediction));
}

/// Road probability as 16-bit grayscale, value = round(p * 65535).
inline void export_probability_png16(const ProbabilityMap& map, const std::filesystem::path& path) {
  std::vector<std::uint16_t> v(map.plane());
  auto road = map.road();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = static_cast<std::uint16_t>(std::lround(std::clamp(road[i], 0.0f, 1.0f) * 65535.0f));
  }
  png::write_gray16(path, map.height, map.width, v);
}

}  // namespace roadseg
