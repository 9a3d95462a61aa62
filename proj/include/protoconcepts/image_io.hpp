#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace protoconcepts {

/// 8-bit interleaved image (HWC). channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

/// Reads PNG or JPEG (by signature). Gray and RGB are returned as-is; alpha is dropped.
Image read_image(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);

Image to_rgb(const Image& image);
/// Bilinear resampling with half-pixel centers.
Image resize_bilinear(const Image& image, int width, int height);
/// Crop [x1, x2) x [y1, y2), clipped to the image.
Image crop(const Image& image, int x1, int y1, int x2, int y2);

}  // namespace protoconcepts
