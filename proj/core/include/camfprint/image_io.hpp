#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace camfp {

/// 8-bit interleaved RGB image, row-major (height x width x 3).
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool empty() const { return pixels.empty(); }
};

/// Decodes any format OpenCV understands. Throws DataError carrying the path.
RgbImage load_rgb(const std::filesystem::path& path);

/// Writes a lossless 8-bit PNG. Throws DataError if the file cannot be written.
void write_png(const std::filesystem::path& path, const RgbImage& image);

/// Area-interpolated resize of the whole frame (no cropping). Returns the
/// input unchanged when the size already matches.
RgbImage resize_image(const RgbImage& image, int width, int height);

}  // namespace camfp
