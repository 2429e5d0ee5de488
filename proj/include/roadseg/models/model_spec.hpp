#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace roadseg {

enum class Variant { unet_32, unet_64, unet_dilated, sliding_window };
enum class Bottleneck { plain, dilated };

inline constexpr std::array<std::string_view, 4> kVariantNames = {
    "unet-32", "unet-64", "unet-dilated", "sliding-window"};

inline std::string_view variant_name(Variant v) {
  return kVariantNames[static_cast<std::size_t>(v)];
}

inline std::optional<Variant> parse_variant(std::string_view name) {
  for (std::size_t i = 0; i < kVariantNames.size(); ++i) {
    if (kVariantNames[i] == name) return static_cast<Variant>(i);
  }
  return std::nullopt;
}

inline std::string variant_list() {
  std::string out;
  for (auto name : kVariantNames) {
    if (!out.empty()) out += ", ";
    out += name;
  }
  return out;
}

inline bool is_unet(Variant v) { return v != Variant::sliding_window; }

/// Architecture description shared by model construction and checkpoints.
struct ModelSpec {
  Variant variant = Variant::unet_32;
  int in_channels = 3;
  int first_layer_channels = 32;
  /// Number of 2x2 pooling stages in the encoder.
  int depth = 4;
  Bottleneck bottleneck = Bottleneck::plain;
  std::vector<int> dilations{1, 2, 4, 8};
  double dropout_after_concat = 0.2;
  /// Sliding-window classifier input side (patch + 2 * context pad).
  int window_size = 64;
  double window_dropout = 0.5;
  double leaky_slope = 0.01;
  std::uint64_t seed = 0;

  int divisor() const { return 1 << depth; }

  void validate() const {
    if (in_channels < 1) throw std::invalid_argument("ModelSpec: in_channels must be >= 1");
    if (is_unet(variant)) {
      if (first_layer_channels < 1) {
        throw std::invalid_argument("ModelSpec: first_layer_channels must be >= 1");
      }
      if (depth < 1 || depth > 8) throw std::invalid_argument("ModelSpec: depth must be in [1,8]");
      if (bottleneck == Bottleneck::dilated && dilations.empty()) {
        throw std::invalid_argument("ModelSpec: dilated bottleneck needs at least one rate");
      }
      for (int r : dilations) {
        if (r < 1) throw std::invalid_argument("ModelSpec: dilation rates must be >= 1");
      }
      if (dropout_after_concat < 0.0 || dropout_after_concat >= 1.0) {
        throw std::invalid_argument("ModelSpec: dropout_after_concat must be in [0,1)");
      }
    } else if (window_size < 16 || window_size % 16 != 0) {
      throw std::invalid_argument("ModelSpec: window_size " + std::to_string(window_size) +
                                  " must be a positive multiple of 16");
    }
  }
};

/// Default architecture for a named variant.
///
/// unet-32 / unet-64 carry dropout 0.2 after each concatenation; unet-dilated
/// was trained without it and keeps first-layer width 32.
inline ModelSpec spec_for(Variant v) {
  ModelSpec s;
  s.variant = v;
  switch (v) {
    case Variant::unet_32:
      s.first_layer_channels = 32;
      break;
    case Variant::unet_64:
      s.first_layer_channels = 64;
      break;
    case Variant::unet_dilated:
      s.first_layer_channels = 32;
      s.bottleneck = Bottleneck::dilated;
      s.dropout_after_concat = 0.0;
      break;
    case Variant::sliding_window:
      s.dropout_after_concat = 0.0;
      break;
  }
  return s;
}

inline ModelSpec spec_for(std::string_view name) {
  auto v = parse_variant(name);
  if (!v) {
    throw std::invalid_argument("unknown model variant '" + std::string(name) +
                                "' (valid: " + variant_list() + ")");
  }
  return spec_for(*v);
}

}  // namespace roadseg
