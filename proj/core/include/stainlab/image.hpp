#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace stainlab {

/// 8-bit RGB image, interleaved, row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 255)
      : width(w), height(h), data(w * h * 3, fill) {}

  std::size_t pixels() const { return width * height; }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t ch) { return data[(y * width + x) * 3 + ch]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t ch) const { return data[(y * width + x) * 3 + ch]; }

  bool operator==(const RgbImage&) const = default;
};

/// Binary segmentation mask, one byte per pixel holding 0 or 1.
struct BinaryMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(std::size_t w, std::size_t h) : width(w), height(h), data(w * h, 0) {}

  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

/// Throws ShapeMismatch unless the image is non-empty with 3 channels.
void validate(const RgbImage& img);

RgbImage read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& img);
/// Masks are stored as 8-bit grayscale with foreground = 255.
BinaryMask read_png_mask(const std::filesystem::path& path);
void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask);
void write_png_gray(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    const std::vector<std::uint8_t>& values);

RgbImage flip_horizontal(const RgbImage& img);
RgbImage flip_vertical(const RgbImage& img);
BinaryMask flip_horizontal(const BinaryMask& mask);
BinaryMask flip_vertical(const BinaryMask& mask);

}  // namespace stainlab
