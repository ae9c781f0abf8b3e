#include "cardseg/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fmt/format.h>
#include <memory>
#include <png.h>

namespace cardseg {

namespace {
struct FileCloser {
  void operator()(FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;
}  // namespace

Image read_png_gray(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error(fmt::format("cannot open PNG '{}'", path));

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(fmt::format("'{}' is not a readable PNG", path));
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  // normalize any input to 8-bit grayscale
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1, -1);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  std::vector<uint8_t> raw(static_cast<size_t>(h) * w);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int i = 0; i < h; ++i) rows[static_cast<size_t>(i)] = raw.data() + static_cast<int64_t>(i) * w;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image out(h, w);
  for (size_t i = 0; i < raw.size(); ++i) out.pixels[i] = raw[i] / 255.0;
  return out;
}

void write_png_gray(const std::string& path, const Image& image) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error(fmt::format("cannot write PNG '{}'", path));

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(fmt::format("PNG write failed for '{}'", path));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> raw(static_cast<size_t>(image.height) * image.width);
  for (size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<uint8_t>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  std::vector<png_bytep> rows(static_cast<size_t>(image.height));
  for (int i = 0; i < image.height; ++i)
    rows[static_cast<size_t>(i)] = raw.data() + static_cast<int64_t>(i) * image.width;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image overlay_mask(const Image& image, const LabelMask& mask) {
  Image out = image;
  static constexpr double kBand[4] = {0.0, 1.0, 0.65, 0.35};
  for (size_t i = 0; i < out.pixels.size(); ++i) {
    const uint8_t m = mask.values[i];
    if (m != 0) out.pixels[i] = 0.4 * out.pixels[i] + 0.6 * kBand[m];
  }
  return out;
}

Image compose_row(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("compose_row: no images");
  const int h = images[0].height, w = images[0].width, sep = 2;
  Image out(h, static_cast<int>(images.size()) * (w + sep) - sep);
  for (size_t k = 0; k < images.size(); ++k) {
    if (images[k].height != h || images[k].width != w)
      throw std::invalid_argument("compose_row: images differ in size");
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        out.at(i, static_cast<int>(k) * (w + sep) + j) = images[k].at(i, j);
  }
  return out;
}

}  // namespace cardseg
