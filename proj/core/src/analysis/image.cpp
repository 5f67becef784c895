#include "twm/analysis/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "twm/errors.hpp"

namespace twm::analysis {

Image::Image(int h, int w, int c, std::uint8_t fill) : height(h), width(w), channels(c) {
  if (h < 0 || w < 0 || (c != 1 && c != 3)) throw UsageError("image: bad dimensions");
  pixels.assign(static_cast<std::size_t>(h) * w * c, fill);
}

Image gray_image(const std::vector<float>& values, int height, int width) {
  if (values.size() != static_cast<std::size_t>(height) * width) throw UsageError("gray_image: size mismatch");
  Image img(height, width, 1);
  for (std::size_t i = 0; i < values.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(values[i], 0.0f, 1.0f) * 255.0f));
  return img;
}

Image upscale(const Image& img, int factor) {
  if (factor < 1) throw UsageError("upscale factor must be >= 1");
  Image out(img.height * factor, img.width * factor, img.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) std::copy_n(img.at(y / factor, x / factor), img.channels, out.at(y, x));
  return out;
}

Image to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  Image out(img.height, img.width, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) std::fill_n(&out.pixels[i * 3], 3, img.pixels[i]);
  return out;
}

Image hconcat(const std::vector<Image>& images, int gap, std::uint8_t background) {
  if (images.empty()) return Image(0, 0, 1);
  int h = 0, w = 0;
  bool rgb = false;
  for (const auto& im : images) {
    h = std::max(h, im.height);
    w += im.width;
    rgb = rgb || im.channels == 3;
  }
  w += gap * static_cast<int>(images.size() - 1);
  Image out(h, w, rgb ? 3 : 1, background);
  int x0 = 0;
  for (const auto& src : images) {
    const auto im = rgb ? to_rgb(src) : src;
    for (int y = 0; y < im.height; ++y)
      std::copy_n(im.at(y, 0), static_cast<std::size_t>(im.width) * im.channels, out.at(y, x0));
    x0 += im.width + gap;
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.height <= 0 || img.width <= 0) throw UsageError("write_png: empty image");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) png_write_row(png, const_cast<png_bytep>(img.at(y, 0)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw DataError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) != 8 || (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": only 8-bit gray or RGB PNG is supported");
  }
  Image img(static_cast<int>(png_get_image_height(png, info)), static_cast<int>(png_get_image_width(png, info)),
            color == PNG_COLOR_TYPE_RGB ? 3 : 1);
  for (int y = 0; y < img.height; ++y) png_read_row(png, img.at(y, 0), nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace twm::analysis
