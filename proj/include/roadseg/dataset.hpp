#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "roadseg/image.hpp"
#include "roadseg/png_io.hpp"

namespace roadseg {

/// Gray level at or above which a mask pixel counts as road.
inline constexpr int kMaskThreshold = 128;

/// Reflects an index into [0, n) about the edges without repeating the edge
/// pixel: for n = 3, ... 2 1 | 0 1 2 | 1 0 ...
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// ---------------------------------------------------------------------------
// Loading

/// Reads a grayscale mask; pixels >= kMaskThreshold are road.
inline BinaryMask read_mask(const std::filesystem::path& path) {
  png::Gray8 gray = png::read_gray8(path);
  BinaryMask mask(gray.height, gray.width);
  for (std::size_t i = 0; i < gray.values.size(); ++i) {
    mask.values[i] = gray.values[i] >= kMaskThreshold ? 1 : 0;
  }
  return mask;
}

inline std::vector<SamplePair> load_pairs(const std::filesystem::path& image_dir,
                                          const std::filesystem::path& mask_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(image_dir)) {
    throw std::runtime_error("image directory '" + image_dir.string() + "' does not exist");
  }
  if (!fs::is_directory(mask_dir)) {
    throw std::runtime_error("mask directory '" + mask_dir.string() + "' does not exist");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(image_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });

  std::vector<SamplePair> pairs;
  pairs.reserve(files.size());
  for (const auto& file : files) {
    const fs::path mask_path = mask_dir / (file.stem().string() + ".png");
    if (!fs::exists(mask_path)) {
      throw std::runtime_error("missing mask for image '" + file.string() + "' (expected '" +
                               mask_path.string() + "')");
    }
    SamplePair pair;
    pair.source_id = file.stem().string();
    pair.image = png::read_rgb(file);
    pair.mask = read_mask(mask_path);
    if (pair.mask.height != pair.image.height || pair.mask.width != pair.image.width) {
      throw std::runtime_error("dimension mismatch between '" + file.string() + "' and '" +
                               mask_path.string() + "'");
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Patch extraction

/// Window offsets along one axis; the final window is clamped to the edge
/// when the stride does not tile the axis exactly.
inline std::vector<int> patch_offsets(int dim, int patch_size, int stride) {
  if (patch_size > dim) throw std::invalid_argument("patch larger than image");
  if (patch_size < 1 || stride < 1) throw std::invalid_argument("patch size and stride must be >= 1");
  std::vector<int> offsets;
  for (int off = 0; off + patch_size <= dim; off += stride) offsets.push_back(off);
  if (offsets.back() + patch_size < dim) offsets.push_back(dim - patch_size);
  return offsets;
}

inline RasterImage crop(const RasterImage& img, int top, int left, int h, int w) {
  RasterImage out(h, w, img.channels);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      const float* src = &img.values[c * img.plane() + static_cast<std::size_t>(top + y) * img.width + left];
      std::copy_n(src, w, &out.at(c, y, 0));
    }
  }
  return out;
}

inline BinaryMask crop(const BinaryMask& mask, int top, int left, int h, int w) {
  BinaryMask out(h, w);
  for (int y = 0; y < h; ++y) {
    std::copy_n(&mask.values[static_cast<std::size_t>(top + y) * mask.width + left], w, &out.at(y, 0));
  }
  return out;
}

inline std::string patch_id(const std::string& source_id, int row, int col) {
  return source_id + "_r" + std::to_string(row) + "_c" + std::to_string(col);
}

/// Cuts a pair into aligned square patches in row-major order.
inline std::vector<SamplePair> extract_patches(const SamplePair& pair, int patch_size = 256,
                                               int stride = 72) {
  require_same_size(pair.image.height, pair.image.width, pair.mask.height, pair.mask.width,
                    "extract_patches");
  if (patch_size > pair.image.height || patch_size > pair.image.width) {
    throw std::invalid_argument("patch larger than image");
  }
  const auto rows = patch_offsets(pair.image.height, patch_size, stride);
  const auto cols = patch_offsets(pair.image.width, patch_size, stride);
  std::vector<SamplePair> out;
  out.reserve(rows.size() * cols.size());
  for (int r : rows) {
    for (int c : cols) {
      out.push_back({crop(pair.image, r, c, patch_size, patch_size),
                     crop(pair.mask, r, c, patch_size, patch_size), patch_id(pair.source_id, r, c)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geometric augmentation

/// Ranges for random affine augmentation. Rotation and shear are in
/// degrees, shifts are fractions of the image side, zoom draws each axis
/// scale from [1 - zoom_range, 1 + zoom_range].
struct AugmentParams {
  double rotation_range = 0.2;
  double width_shift_range = 0.2;
  double height_shift_range = 0.2;
  double shear_range = 0.2;
  double zoom_range = 0.2;
  bool horizontal_flip = true;
  bool vertical_flip = true;
  std::uint64_t seed = 0;

  static AugmentParams none() {
    AugmentParams p;
    p.rotation_range = p.width_shift_range = p.height_shift_range = 0.0;
    p.shear_range = p.zoom_range = 0.0;
    p.horizontal_flip = p.vertical_flip = false;
    return p;
  }

  void validate() const {
    for (double r : {rotation_range, width_shift_range, height_shift_range, shear_range, zoom_range}) {
      if (!(r >= 0.0)) throw std::invalid_argument("augmentation ranges must be >= 0");
    }
    if (zoom_range >= 1.0) throw std::invalid_argument("zoom_range must be < 1");
  }
};

/// One sampled transform, shared by both members of a pair.
struct AffineDraw {
  double rotation_deg = 0.0;
  double shift_rows = 0.0;
  double shift_cols = 0.0;
  double shear_deg = 0.0;
  double zoom_rows = 1.0;
  double zoom_cols = 1.0;
  bool flip_horizontal = false;
  bool flip_vertical = false;

  bool affine_is_identity() const {
    return rotation_deg == 0.0 && shift_rows == 0.0 && shift_cols == 0.0 && shear_deg == 0.0 &&
           zoom_rows == 1.0 && zoom_cols == 1.0;
  }
};

inline AffineDraw draw_augmentation(const AugmentParams& p, int height, int width,
                                    std::mt19937_64& rng) {
  p.validate();
  auto sym = [&rng](double range) {
    if (range == 0.0) return 0.0;
    return std::uniform_real_distribution<double>(-range, range)(rng);
  };
  AffineDraw d;
  d.rotation_deg = sym(p.rotation_range);
  d.shift_rows = sym(p.height_shift_range) * height;
  d.shift_cols = sym(p.width_shift_range) * width;
  d.shear_deg = sym(p.shear_range);
  d.zoom_rows = 1.0 + sym(p.zoom_range);
  d.zoom_cols = 1.0 + sym(p.zoom_range);
  std::bernoulli_distribution coin(0.5);
  d.flip_horizontal = p.horizontal_flip && coin(rng);
  d.flip_vertical = p.vertical_flip && coin(rng);
  return d;
}

namespace detail {

/// Output (row, col) -> input (row, col) map: rotation * shift * shear * zoom
/// about the image center.
struct InverseAffine {
  double a00, a01, a02, a10, a11, a12;

  InverseAffine(const AffineDraw& d, int height, int width) {
    const double th = d.rotation_deg * std::numbers::pi / 180.0;
    const double sh = d.shear_deg * std::numbers::pi / 180.0;
    // R * T
    const double r00 = std::cos(th), r01 = -std::sin(th);
    const double r10 = std::sin(th), r11 = std::cos(th);
    const double t0 = r00 * d.shift_rows + r01 * d.shift_cols;
    const double t1 = r10 * d.shift_rows + r11 * d.shift_cols;
    // * Shear * Zoom
    const double s00 = d.zoom_rows, s01 = -std::sin(sh) * d.zoom_cols;
    const double s10 = 0.0, s11 = std::cos(sh) * d.zoom_cols;
    const double m00 = r00 * s00 + r01 * s10, m01 = r00 * s01 + r01 * s11;
    const double m10 = r10 * s00 + r11 * s10, m11 = r10 * s01 + r11 * s11;
    const double cr = (height - 1) / 2.0, cc = (width - 1) / 2.0;
    a00 = m00;
    a01 = m01;
    a02 = t0 + cr - (m00 * cr + m01 * cc);
    a10 = m10;
    a11 = m11;
    a12 = t1 + cc - (m10 * cr + m11 * cc);
  }
};

template <typename Sampler>
void warp(int height, int width, const AffineDraw& d, Sampler&& sample) {
  const InverseAffine m(d, height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double sr = m.a00 * r + m.a01 * c + m.a02;
      const double sc = m.a10 * r + m.a11 * c + m.a12;
      sample(r, c, sr, sc);
    }
  }
}

inline void flip_in_place(std::vector<float>& v, int planes, int h, int w, bool horizontal, bool vertical) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int p = 0; p < planes; ++p) {
    float* base = v.data() + p * plane;
    if (horizontal) {
      for (int y = 0; y < h; ++y) std::reverse(base + static_cast<std::size_t>(y) * w, base + static_cast<std::size_t>(y + 1) * w);
    }
    if (vertical) {
      for (int y = 0; y < h / 2; ++y) {
        std::swap_ranges(base + static_cast<std::size_t>(y) * w, base + static_cast<std::size_t>(y + 1) * w,
                         base + static_cast<std::size_t>(h - 1 - y) * w);
      }
    }
  }
}

inline void flip_in_place(std::vector<std::uint8_t>& v, int h, int w, bool horizontal, bool vertical) {
  if (horizontal) {
    for (int y = 0; y < h; ++y) std::reverse(v.begin() + static_cast<std::ptrdiff_t>(y) * w, v.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
  }
  if (vertical) {
    for (int y = 0; y < h / 2; ++y) {
      std::swap_ranges(v.begin() + static_cast<std::ptrdiff_t>(y) * w, v.begin() + static_cast<std::ptrdiff_t>(y + 1) * w,
                       v.begin() + static_cast<std::ptrdiff_t>(h - 1 - y) * w);
    }
  }
}

}  // namespace detail

/// Applies a sampled transform: bilinear resampling for the image,
/// nearest-neighbour for the mask, reflection fill for both, then flips.
inline SamplePair apply_augmentation(const SamplePair& pair, const AffineDraw& d) {
  const int h = pair.image.height;
  const int w = pair.image.width;
  require_same_size(h, w, pair.mask.height, pair.mask.width, "augment_pair");
  SamplePair out;
  out.source_id = pair.source_id;
  if (d.affine_is_identity()) {
    out.image = pair.image;
    out.mask = pair.mask;
  } else {
    out.image = RasterImage(h, w, pair.image.channels);
    out.mask = BinaryMask(h, w);
    const std::size_t plane = pair.image.plane();
    detail::warp(h, w, d, [&](int r, int c, double sr, double sc) {
      const double fr = std::floor(sr);
      const double fc = std::floor(sc);
      const double wr = sr - fr;
      const double wc = sc - fc;
      const int r0 = reflect_index(static_cast<int>(fr), h);
      const int r1 = reflect_index(static_cast<int>(fr) + 1, h);
      const int c0 = reflect_index(static_cast<int>(fc), w);
      const int c1 = reflect_index(static_cast<int>(fc) + 1, w);
      for (int ch = 0; ch < pair.image.channels; ++ch) {
        const float* src = pair.image.values.data() + ch * plane;
        const double top = (1.0 - wc) * src[static_cast<std::size_t>(r0) * w + c0] + wc * src[static_cast<std::size_t>(r0) * w + c1];
        const double bot = (1.0 - wc) * src[static_cast<std::size_t>(r1) * w + c0] + wc * src[static_cast<std::size_t>(r1) * w + c1];
        out.image.at(ch, r, c) = static_cast<float>((1.0 - wr) * top + wr * bot);
      }
      const int nr = reflect_index(static_cast<int>(std::floor(sr + 0.5)), h);
      const int nc = reflect_index(static_cast<int>(std::floor(sc + 0.5)), w);
      out.mask.at(r, c) = pair.mask.at(nr, nc);
    });
  }
  detail::flip_in_place(out.image.values, out.image.channels, h, w, d.flip_horizontal, d.flip_vertical);
  detail::flip_in_place(out.mask.values, h, w, d.flip_horizontal, d.flip_vertical);
  return out;
}

inline SamplePair augment_pair(const SamplePair& pair, const AugmentParams& params,
                               std::mt19937_64& rng) {
  return apply_augmentation(pair, draw_augmentation(params, pair.image.height, pair.image.width, rng));
}

// ---------------------------------------------------------------------------
// Sliding-window support

/// Pads by reflection about the edges (edge pixel not repeated).
inline RasterImage mirror_pad(const RasterImage& img, int pad) {
  if (pad < 0) throw std::invalid_argument("mirror_pad: negative pad");
  if (pad >= img.height || pad >= img.width) {
    throw std::invalid_argument("mirror_pad: pad " + std::to_string(pad) +
                                " must be smaller than both image sides");
  }
  const int h = img.height + 2 * pad;
  const int w = img.width + 2 * pad;
  RasterImage out(h, w, img.channels);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      const int sy = reflect_index(y - pad, img.height);
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, sy, reflect_index(x - pad, img.width));
    }
  }
  return out;
}

/// A size x size window whose top-left corner may lie outside the image;
/// out-of-range pixels follow mirror_pad's reflection.
inline RasterImage extract_window(const RasterImage& img, int top, int left, int size) {
  RasterImage out(size, size, img.channels);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < size; ++y) {
      const int sy = reflect_index(top + y, img.height);
      for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, sy, reflect_index(left + x, img.width));
    }
  }
  return out;
}

/// Rotates a square image counter-clockwise by quarter_turns * 90 degrees.
inline RasterImage rotate_quarter_turns(const RasterImage& img, int quarter_turns) {
  quarter_turns = ((quarter_turns % 4) + 4) % 4;
  if (quarter_turns == 0) return img;
  if (img.height != img.width) throw std::invalid_argument("rotate_quarter_turns: image not square");
  const int n = img.height;
  RasterImage out(n, n, img.channels);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        int sy = y, sx = x;
        switch (quarter_turns) {
          case 1: sy = x; sx = n - 1 - y; break;
          case 2: sy = n - 1 - y; sx = n - 1 - x; break;
          case 3: sy = n - 1 - x; sx = y; break;
        }
        out.at(c, y, x) = img.at(c, sy, sx);
      }
    }
  }
  return out;
}

inline RasterImage flip_horizontal(RasterImage img) {
  detail::flip_in_place(img.values, img.channels, img.height, img.width, true, false);
  return img;
}

struct TrainingWindow {
  RasterImage window;
  std::uint8_t label = 0;
  std::size_t pair_index = 0;
  int row = 0;
  int col = 0;
  bool flipped = false;
  int quarter_turns = 0;
};

/// Road fraction above which a patch counts as road.
inline constexpr double kRoadFractionThreshold = 0.25;

inline double road_fraction(const BinaryMask& mask, int top, int left, int size) {
  int count = 0;
  for (int y = top; y < top + size; ++y) {
    for (int x = left; x < left + size; ++x) count += mask.at(y, x);
  }
  return static_cast<double>(count) / (static_cast<double>(size) * size);
}

/// Samples one labelled training window for the window classifier: a
/// random patch in a random pair, surrounded by `context_pad` pixels of
/// context, randomly flipped and rotated by a multiple of 90 degrees.
inline TrainingWindow sample_training_window(const std::vector<SamplePair>& pairs, std::mt19937_64& rng,
                                             int patch_size = 16, int context_pad = 24) {
  if (pairs.empty()) throw std::invalid_argument("sample_training_window: no pairs");
  TrainingWindow tw;
  tw.pair_index = std::uniform_int_distribution<std::size_t>(0, pairs.size() - 1)(rng);
  const SamplePair& p = pairs[tw.pair_index];
  if (patch_size > p.image.height || patch_size > p.image.width) {
    throw std::invalid_argument("patch larger than image");
  }
  if (context_pad >= p.image.height || context_pad >= p.image.width) {
    throw std::invalid_argument("context pad must be smaller than both image sides");
  }
  tw.row = std::uniform_int_distribution<int>(0, p.image.height - patch_size)(rng);
  tw.col = std::uniform_int_distribution<int>(0, p.image.width - patch_size)(rng);
  tw.flipped = std::bernoulli_distribution(0.5)(rng);
  tw.quarter_turns = std::uniform_int_distribution<int>(0, 3)(rng);
  RasterImage raw = extract_window(p.image, tw.row - context_pad, tw.col - context_pad,
                                   patch_size + 2 * context_pad);
  if (tw.flipped) raw = flip_horizontal(std::move(raw));
  tw.window = rotate_quarter_turns(raw, tw.quarter_turns);
  tw.label = road_fraction(p.mask, tw.row, tw.col, patch_size) > kRoadFractionThreshold ? 1 : 0;
  return tw;
}

// ---------------------------------------------------------------------------
// Splitting

/// Seeded shuffle, then floor(n * ratio) items to train (clamped so both
/// sides are nonempty).
template <typename Item>
std::pair<std::vector<Item>, std::vector<Item>> split_train_val(const std::vector<Item>& items,
                                                                double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must be in (0,1)");
  if (items.size() < 2) throw std::invalid_argument("split needs at least 2 items");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(items.size()) * ratio + 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, items.size() - 1);
  std::pair<std::vector<Item>, std::vector<Item>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(items[order[i]]);
  }
  return out;
}

}  // namespace roadseg
