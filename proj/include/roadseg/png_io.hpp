#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/image.hpp"

namespace roadseg::png {

struct Gray8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;
};

namespace detail {

inline std::vector<std::uint8_t> read(const std::filesystem::path& path, std::uint32_t format,
                                      int& height, int& width) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw std::runtime_error("cannot read PNG '" + path.string() + "': " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG '" + path.string() + "': " + msg);
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return buffer;
}

inline void write(const std::filesystem::path& path, std::uint32_t format, int height, int width,
                  const void* data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, data, 0, nullptr)) {
    throw std::runtime_error("cannot write PNG '" + path.string() + "': " + image.message);
  }
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace detail

/// Reads any PNG as 8-bit RGB rescaled to [0, 1].
inline RasterImage read_rgb(const std::filesystem::path& path) {
  int h = 0, w = 0;
  auto buf = detail::read(path, PNG_FORMAT_RGB, h, w);
  RasterImage img(h, w, 3);
  const std::size_t plane = img.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) img.values[c * plane + i] = buf[3 * i + c] / 255.0f;
  }
  return img;
}

/// Reads any PNG as 8-bit grayscale.
inline Gray8 read_gray8(const std::filesystem::path& path) {
  Gray8 g;
  g.values = detail::read(path, PNG_FORMAT_GRAY, g.height, g.width);
  return g;
}

inline void write_rgb(const std::filesystem::path& path, const RasterImage& img) {
  if (img.channels != 3 && img.channels != 1) {
    throw std::invalid_argument("write_rgb: expected 1 or 3 channels");
  }
  const std::size_t plane = img.plane();
  std::vector<std::uint8_t> buf(plane * 3);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const int src = img.channels == 3 ? c : 0;
      buf[3 * i + c] = detail::to_byte(img.values[src * plane + i]);
    }
  }
  detail::write(path, PNG_FORMAT_RGB, img.height, img.width, buf.data());
}

inline void write_gray8(const std::filesystem::path& path, int height, int width,
                        const std::vector<std::uint8_t>& values) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("write_gray8: size mismatch");
  }
  detail::write(path, PNG_FORMAT_GRAY, height, width, values.data());
}

/// Writes a mask with road = 255, background = 0.
inline void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> buf(mask.values.size());
  std::transform(mask.values.begin(), mask.values.end(), buf.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
  write_gray8(path, mask.height, mask.width, buf);
}

/// 16-bit linear grayscale.
inline void write_gray16(const std::filesystem::path& path, int height, int width,
                         const std::vector<std::uint16_t>& values) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("write_gray16: size mismatch");
  }
  detail::write(path, PNG_FORMAT_LINEAR_Y, height, width, values.data());
}

inline std::vector<std::uint16_t> read_gray16(const std::filesystem::path& path, int& height,
                                              int& width) {
  auto buf = detail::read(path, PNG_FORMAT_LINEAR_Y, height, width);
  std::vector<std::uint16_t> out(static_cast<std::size_t>(height) * width);
  std::memcpy(out.data(), buf.data(), out.size() * sizeof(std::uint16_t));
  return out;
}

}  // namespace roadseg::png
