#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace twm::analysis {

/// 8-bit image, row-major, `channels` = 1 (gray) or 3 (RGB).
struct Image {
  int height = 0, width = 0, channels = 1;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, int c, std::uint8_t fill = 0);
  std::uint8_t* at(int y, int x) { return &pixels[(static_cast<std::size_t>(y) * width + x) * channels]; }
  const std::uint8_t* at(int y, int x) const { return &pixels[(static_cast<std::size_t>(y) * width + x) * channels]; }
};

/// Gray image from values in [0,1] (clamped), H x W row-major.
Image gray_image(const std::vector<float>& values, int height, int width);
/// Nearest-neighbour upscaling by an integer factor.
Image upscale(const Image& img, int factor);
/// Converts gray to RGB; RGB passes through.
Image to_rgb(const Image& img);
/// Places images side by side with `gap` background columns between them.
Image hconcat(const std::vector<Image>& images, int gap = 1, std::uint8_t background = 64);
void write_png(const std::filesystem::path& path, const Image& img);
/// Reads an 8-bit gray or RGB PNG.
Image read_png(const std::filesystem::path& path);

}  // namespace twm::analysis
