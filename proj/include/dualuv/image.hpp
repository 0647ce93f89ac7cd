#pragma once

// Dense multi-channel maps (images, feature maps, UV grids) and the
// netpbm formats used for masks and renders.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dualuv {

/// H x W x C, row-major, channel fastest.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int channels, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  double& at(int row, int col, int ch) { return data_[index(row, col, ch)]; }
  double at(int row, int col, int ch) const { return data_[index(row, col, ch)]; }
  std::span<double> pixel(int row, int col) {
    return {data_.data() + index(row, col, 0), static_cast<std::size_t>(channels_)};
  }
  std::span<const double> pixel(int row, int col) const {
    return {data_.data() + index(row, col, 0), static_cast<std::size_t>(channels_)};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t index(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Binary or 8-bit single-channel image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Netpbm: P5 (gray) and P6 (rgb), maxval 255, single whitespace after header.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
FeatureMap read_ppm(const std::filesystem::path& path);  // 3 channels in [0, 1]
void write_ppm(const std::filesystem::path& path, const FeatureMap& rgb);  // first 3 channels

/// Mask (nonzero = foreground) rendered as 0/255.
GrayImage mask_to_pgm(std::span<const std::uint8_t> mask, int width, int height);

std::uint8_t to_byte(double unit_value);

}  // namespace dualuv
