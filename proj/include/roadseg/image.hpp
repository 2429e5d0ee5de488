#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/tensor.hpp"

namespace roadseg {

/// Planar (channel-major) image with values in [0, 1].
struct RasterImage {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> values;

  RasterImage() = default;
  RasterImage(int h, int w, int c = 3, float fill = 0.0f)
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return values[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const {
    return values[c * plane() + static_cast<std::size_t>(y) * width + x];
  }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

/// Per-pixel road label, 1 = road.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

struct SamplePair {
  RasterImage image;
  BinaryMask mask;
  std::string source_id;
};

/// Two-class per-pixel probabilities; plane 0 background, plane 1 road.
struct ProbabilityMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  ProbabilityMap() = default;
  ProbabilityMap(int h, int w) : height(h), width(w), values(2 * static_cast<std::size_t>(h) * w) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::span<float> road() { return {values.data() + plane(), plane()}; }
  std::span<const float> road() const { return {values.data() + plane(), plane()}; }
  std::span<const float> background() const { return {values.data(), plane()}; }
  float road_at(int y, int x) const { return values[plane() + static_cast<std::size_t>(y) * width + x]; }

  /// Builds a map from road probabilities; background = 1 - road.
  static ProbabilityMap from_road(int h, int w, std::span<const float> road) {
    ProbabilityMap m(h, w);
    if (road.size() != m.plane()) throw std::invalid_argument("from_road: size mismatch");
    for (std::size_t i = 0; i < road.size(); ++i) {
      m.values[i] = 1.0f - road[i];
      m.values[m.plane() + i] = road[i];
    }
    return m;
  }

  friend bool operator==(const ProbabilityMap&, const ProbabilityMap&) = default;
};

inline void require_same_size(int h1, int w1, int h2, int w2, const char* what) {
  if (h1 != h2 || w1 != w2) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + std::to_string(h1) + "x" +
                                std::to_string(w1) + " vs " + std::to_string(h2) + "x" +
                                std::to_string(w2));
  }
}

/// Stacks images into an (N, C, H, W) tensor.
template <typename T = float>
Tensor<T> to_tensor(std::span<const RasterImage* const> images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: empty batch");
  const RasterImage& first = *images.front();
  Tensor<T> t(static_cast<int>(images.size()), first.channels, first.height, first.width);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const RasterImage& im = *images[n];
    if (im.channels != first.channels || im.height != first.height || im.width != first.width) {
      throw std::invalid_argument("to_tensor: images in a batch must share a shape");
    }
    T* dst = t.sample(static_cast<int>(n));
    for (std::size_t i = 0; i < im.values.size(); ++i) dst[i] = static_cast<T>(im.values[i]);
  }
  return t;
}

template <typename T = float>
Tensor<T> to_tensor(const RasterImage& image) {
  const RasterImage* p = &image;
  return to_tensor<T>(std::span<const RasterImage* const>(&p, 1));
}

/// Extracts sample `n` of a (N, 2, H, W) probability tensor.
template <typename T>
ProbabilityMap to_probability_map(const Tensor<T>& probs, int n) {
  if (probs.c() != 2) throw std::invalid_argument("to_probability_map: expected 2 channels");
  ProbabilityMap m(probs.h(), probs.w());
  const T* src = probs.sample(n);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = static_cast<float>(src[i]);
  return m;
}

}  // namespace roadseg
