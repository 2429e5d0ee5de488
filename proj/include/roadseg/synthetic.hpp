#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "roadseg/image.hpp"

namespace roadseg {

/// Knobs for generated aerial-like scenes: road strokes drawn as thick
/// polylines over textured noise with rectangular roof distractors.
struct SyntheticOptions {
  int size = 256;
  int min_roads = 2;
  int max_roads = 4;
  double min_width = 10.0;
  double max_width = 18.0;
  int max_roofs = 6;
  double pixel_noise = 0.04;
};

namespace detail {

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = ax + t * dx - px, ey = ay + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace detail

inline SamplePair generate_synthetic_pair(std::mt19937_64& rng, const SyntheticOptions& opt = {},
                                          const std::string& id = "synthetic") {
  const int n = opt.size;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, opt.pixel_noise);
  SamplePair pair{RasterImage(n, n, 3), BinaryMask(n, n), id};

  // Low-frequency ground texture: a base vegetation/soil colour modulated by
  // a few random plane waves.
  const double base[3] = {0.25 + 0.15 * unit(rng), 0.35 + 0.2 * unit(rng), 0.2 + 0.1 * unit(rng)};
  struct Wave { double kx, ky, phase, amp; };
  std::vector<Wave> waves;
  for (int k = 0; k < 4; ++k) {
    const double angle = unit(rng) * 2.0 * std::numbers::pi;
    const double freq = (1.0 + 5.0 * unit(rng)) * 2.0 * std::numbers::pi / n;
    waves.push_back({std::cos(angle) * freq, std::sin(angle) * freq, unit(rng) * 2.0 * std::numbers::pi,
                     0.03 + 0.05 * unit(rng)});
  }
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double t = 0.0;
      for (const auto& w : waves) t += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
      for (int c = 0; c < 3; ++c) pair.image.at(c, y, x) = static_cast<float>(base[c] + t);
    }
  }

  // Roofs: axis-aligned blocks in brick / dark tones.
  std::uniform_int_distribution<int> roof_count(0, opt.max_roofs);
  const int roofs = roof_count(rng);
  for (int k = 0; k < roofs; ++k) {
    const int w = std::min(12 + static_cast<int>(unit(rng) * 30), n / 2);
    const int h = std::min(12 + static_cast<int>(unit(rng) * 30), n / 2);
    const int x0 = static_cast<int>(unit(rng) * (n - w)), y0 = static_cast<int>(unit(rng) * (n - h));
    const bool brick = unit(rng) < 0.5;
    const double col[3] = {brick ? 0.55 + 0.1 * unit(rng) : 0.2, brick ? 0.3 : 0.2, brick ? 0.25 : 0.22};
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) {
        for (int c = 0; c < 3; ++c) pair.image.at(c, y, x) = static_cast<float>(col[c]);
      }
    }
  }

  // Roads: polylines from one border to another with one or two bends.
  std::uniform_int_distribution<int> road_count(opt.min_roads, opt.max_roads);
  const int roads = road_count(rng);
  auto border_point = [&](int side) {
    const double t = 0.1 + 0.8 * unit(rng);
    switch (side) {
      case 0: return std::pair{t * n, -4.0};
      case 1: return std::pair{n + 3.0, t * n};
      case 2: return std::pair{t * n, n + 3.0};
      default: return std::pair{-4.0, t * n};
    }
  };
  for (int k = 0; k < roads; ++k) {
    const int side = static_cast<int>(unit(rng) * 4) % 4;
    auto [ax, ay] = border_point(side);
    auto [bx, by] = border_point((side + 1 + static_cast<int>(unit(rng) * 3)) % 4);
    std::vector<std::pair<double, double>> pts{{ax, ay}};
    const int bends = 1 + static_cast<int>(unit(rng) * 2);
    for (int b = 1; b <= bends; ++b) {
      const double t = static_cast<double>(b) / (bends + 1);
      pts.emplace_back(ax + t * (bx - ax) + (unit(rng) - 0.5) * 0.25 * n,
                       ay + t * (by - ay) + (unit(rng) - 0.5) * 0.25 * n);
    }
    pts.emplace_back(bx, by);
    const double half = 0.5 * (opt.min_width + unit(rng) * (opt.max_width - opt.min_width));
    const double gray = 0.55 + 0.15 * unit(rng);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        double d = 1e9;
        for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
          d = std::min(d, detail::segment_distance(x, y, pts[s].first, pts[s].second, pts[s + 1].first,
                                                   pts[s + 1].second));
        }
        if (d <= half) {
          pair.mask.at(y, x) = 1;
          const double lane = std::abs(d) < 0.8 ? 0.15 : 0.0;
          for (int c = 0; c < 3; ++c) pair.image.at(c, y, x) = static_cast<float>(gray + lane - 0.02 * c);
        }
      }
    }
  }

  for (auto& v : pair.image.values) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
  return pair;
}

inline std::vector<SamplePair> generate_synthetic_set(std::size_t count, std::uint64_t seed,
                                                      const SyntheticOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  std::vector<SamplePair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", i);
    out.push_back(generate_synthetic_pair(rng, opt, id));
  }
  return out;
}

}  // namespace roadseg
