#include "stainlab/image.hpp"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "stainlab/error.hpp"

namespace fs = std::filesystem;

namespace stainlab {

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

void validate(const RgbImage& img) {
  if (img.width == 0 || img.height == 0 || img.data.size() != img.width * img.height * 3) {
    fail(ErrorCode::ShapeMismatch, "RGB image must be non-empty with exactly 3 channels");
  }
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decodes any 8/16-bit PNG into `channels` (1 or 3) bytes per pixel.
std::vector<std::uint8_t> read_png(const fs::path& path, int channels, std::size_t& width,
                                   std::size_t& height) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) fail(ErrorCode::DataMissing, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) fail(ErrorCode::IoError, "libpng initialisation failed");
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::IoError, "cannot decode PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (channels == 3 && gray) png_set_gray_to_rgb(png);
  if (channels == 1 && !gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != width * static_cast<std::size_t>(channels)) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::IoError, "unexpected PNG layout in " + path.string());
  }
  pixels.resize(stride * height);
  rows.resize(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

void write_png(const fs::path& path, std::size_t width, std::size_t height, int channels,
               const std::uint8_t* pixels) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) fail(ErrorCode::IoError, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) fail(ErrorCode::IoError, "libpng initialisation failed");
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoError, "cannot encode PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    rows[y] = const_cast<png_bytep>(pixels + y * width * static_cast<std::size_t>(channels));
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

template <typename Img>
Img flip(const Img& img, std::size_t channels, bool horizontal) {
  Img out = img;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t sx = horizontal ? img.width - 1 - x : x;
      const std::size_t sy = horizontal ? y : img.height - 1 - y;
      for (std::size_t c = 0; c < channels; ++c) {
        out.data[(y * img.width + x) * channels + c] = img.data[(sy * img.width + sx) * channels + c];
      }
    }
  }
  return out;
}

}  // namespace

RgbImage read_png_rgb(const fs::path& path) {
  RgbImage img;
  img.data = read_png(path, 3, img.width, img.height);
  return img;
}

void write_png_rgb(const fs::path& path, const RgbImage& img) {
  validate(img);
  write_png(path, img.width, img.height, 3, img.data.data());
}

BinaryMask read_png_mask(const fs::path& path) {
  BinaryMask mask;
  mask.data = read_png(path, 1, mask.width, mask.height);
  for (auto& v : mask.data) v = v >= 128 ? 1 : 0;
  return mask;
}

void write_png_mask(const fs::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> gray(mask.data.size());
  std::transform(mask.data.begin(), mask.data.end(), gray.begin(),
                 [](std::uint8_t v) -> std::uint8_t { return v ? 255 : 0; });
  write_png(path, mask.width, mask.height, 1, gray.data());
}

void write_png_gray(const fs::path& path, std::size_t width, std::size_t height,
                    const std::vector<std::uint8_t>& values) {
  if (values.size() != width * height) fail(ErrorCode::ShapeMismatch, "grayscale buffer size");
  write_png(path, width, height, 1, values.data());
}

RgbImage flip_horizontal(const RgbImage& img) { return flip(img, 3, true); }
RgbImage flip_vertical(const RgbImage& img) { return flip(img, 3, false); }
BinaryMask flip_horizontal(const BinaryMask& mask) { return flip(mask, 1, true); }
BinaryMask flip_vertical(const BinaryMask& mask) { return flip(mask, 1, false); }

}  // namespace stainlab
