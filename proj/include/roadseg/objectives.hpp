#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/image.hpp"

namespace roadseg {

/// Side of a scored chunk, in pixels.
inline constexpr int kPatchSize = 16;
/// A chunk is road when its mean road value strictly exceeds this.
inline constexpr double kPatchThreshold = 0.25;

struct LossConfig {
  /// Smoothing added to numerator and denominator.
  double epsilon = 1.0;
};

/// Smoothed soft dice loss
///
///   L = 1 - (2 * sum(p * t) + eps) / (sum(p) + sum(t) + eps)
///
/// over road probabilities `pred` and targets `truth` in [0, 1]. With
/// eps = 0 and both inputs empty the loss is defined as 0.
template <typename T>
T dice_loss(std::span<const T> pred, std::span<const T> truth, T epsilon = T{1}) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("dice_loss: shape mismatch (" + std::to_string(pred.size()) +
                                " vs " + std::to_string(truth.size()) + " elements)");
  }
  T inter{0}, sum_p{0}, sum_t{0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * truth[i];
    sum_p += pred[i];
    sum_t += truth[i];
  }
  const T den = sum_p + sum_t + epsilon;
  if (den == T{0}) return T{0};
  return T{1} - (T{2} * inter + epsilon) / den;
}

/// dL/dpred for dice_loss; writes into `grad` and returns the loss.
template <typename T>
T dice_loss_grad(std::span<const T> pred, std::span<const T> truth, std::span<T> grad,
                 T epsilon = T{1}) {
  if (pred.size() != truth.size() || grad.size() != pred.size()) {
    throw std::invalid_argument("dice_loss_grad: shape mismatch");
  }
  T inter{0}, sum_p{0}, sum_t{0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * truth[i];
    sum_p += pred[i];
    sum_t += truth[i];
  }
  const T num = T{2} * inter + epsilon;
  const T den = sum_p + sum_t + epsilon;
  if (den == T{0}) {
    std::fill(grad.begin(), grad.end(), T{0});
    return T{0};
  }
  // d/dp_i [1 - num/den] = -(2 t_i den - num) / den^2
  const T inv_den2 = T{1} / (den * den);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    grad[i] = -(T{2} * truth[i] * den - num) * inv_den2;
  }
  return T{1} - num / den;
}

inline std::vector<float> mask_as_float(const BinaryMask& m) {
  return {m.values.begin(), m.values.end()};
}

inline double dice_loss(const ProbabilityMap& pred, const BinaryMask& truth,
                        const LossConfig& cfg = {}) {
  require_same_size(pred.height, pred.width, truth.height, truth.width, "dice_loss");
  std::vector<double> p(pred.road().begin(), pred.road().end());
  std::vector<double> t(truth.values.begin(), truth.values.end());
  return dice_loss<double>(p, t, cfg.epsilon);
}

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }

  /// tp / (tp + (fp + fn) / 2); 1 when there are no positives at all.
  double f1() const {
    if (tp + fp + fn == 0) return 1.0;
    return static_cast<double>(tp) / (static_cast<double>(tp) + 0.5 * static_cast<double>(fp + fn));
  }

  /// |pred ∩ truth| / |pred ∪ truth|; 1 when both are empty.
  double iou() const {
    if (tp + fp + fn == 0) return 1.0;
    return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  }
};

inline ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("confusion: shape mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool t = truth[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth) {
  require_same_size(pred.height, pred.width, truth.height, truth.width, "confusion");
  return confusion(std::span<const std::uint8_t>(pred.values), std::span<const std::uint8_t>(truth.values));
}

inline double iou(const BinaryMask& pred, const BinaryMask& truth) { return confusion(pred, truth).iou(); }

inline double f1_pixel(const BinaryMask& pred, const BinaryMask& truth) {
  return confusion(pred, truth).f1();
}

/// Thresholds road probabilities into a mask (road iff p > threshold).
inline BinaryMask threshold_mask(const ProbabilityMap& map, double threshold = 0.5) {
  BinaryMask m(map.height, map.width);
  auto road = map.road();
  for (std::size_t i = 0; i < road.size(); ++i) m.values[i] = road[i] > threshold ? 1 : 0;
  return m;
}

/// Binary labels for square chunks of an image.
struct PatchGrid {
  int patch_size = kPatchSize;
  double threshold = kPatchThreshold;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(int r, int c) const { return labels[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t& at(int r, int c) { return labels[static_cast<std::size_t>(r) * cols + c]; }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

/// Labels each chunk 1 iff the mean of `values` over it exceeds `threshold`.
template <typename V>
PatchGrid patch_labels(std::span<const V> values, int height, int width, int patch_size = kPatchSize,
                       double threshold = kPatchThreshold) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("patch_labels: value count does not match dimensions");
  }
  if (patch_size < 1 || height % patch_size != 0 || width % patch_size != 0) {
    throw std::invalid_argument("patch_labels: image " + std::to_string(height) + "x" +
                                std::to_string(width) + " is not divisible into " +
                                std::to_string(patch_size) + "x" + std::to_string(patch_size) +
                                " chunks");
  }
  PatchGrid g;
  g.patch_size = patch_size;
  g.threshold = threshold;
  g.rows = height / patch_size;
  g.cols = width / patch_size;
  g.labels.assign(static_cast<std::size_t>(g.rows) * g.cols, 0);
  const double area = static_cast<double>(patch_size) * patch_size;
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      double sum = 0.0;
      for (int y = r * patch_size; y < (r + 1) * patch_size; ++y) {
        const V* row = values.data() + static_cast<std::size_t>(y) * width + c * patch_size;
        for (int x = 0; x < patch_size; ++x) sum += static_cast<double>(row[x]);
      }
      g.at(r, c) = sum / area > threshold ? 1 : 0;
    }
  }
  return g;
}

inline PatchGrid patch_labels(const BinaryMask& mask, int patch_size = kPatchSize,
                              double threshold = kPatchThreshold) {
  return patch_labels<std::uint8_t>(mask.values, mask.height, mask.width, patch_size, threshold);
}

inline PatchGrid patch_labels(const ProbabilityMap& map, int patch_size = kPatchSize,
                              double threshold = kPatchThreshold) {
  return patch_labels<float>(map.road(), map.height, map.width, patch_size, threshold);
}

/// F1 over chunk labels, pooling counts across all grids.
inline double f1_patch(const std::vector<PatchGrid>& pred, const std::vector<PatchGrid>& truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("f1_patch: " + std::to_string(pred.size()) + " predicted grids vs " +
                                std::to_string(truth.size()) + " truth grids");
  }
  ConfusionCounts total;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].rows != truth[i].rows || pred[i].cols != truth[i].cols) {
      throw std::invalid_argument("f1_patch: grid shape mismatch at index " + std::to_string(i));
    }
    total += confusion(std::span<const std::uint8_t>(pred[i].labels),
                       std::span<const std::uint8_t>(truth[i].labels));
  }
  return total.f1();
}

}  // namespace roadseg
