#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gtforge/errors.hpp"

namespace gtforge {

/// Single-channel row-major raster.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
    if (width < 0 || height < 0) throw SizeMismatch("negative image dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using ImageF = Image<float>;
using Mask = Image<std::uint8_t>;

// PFM, Middlebury layout: "Pf\n<w> <h>\n<scale>\n", negative scale means
// little-endian, rows stored bottom-to-top, one float32 per pixel.
void write_pfm(const std::filesystem::path& path, const ImageF& image);
ImageF read_pfm(const std::filesystem::path& path);

// Grayscale PNG in/out. RGB and RGBA inputs are converted to luma.
// 16-bit inputs keep their full range (0..65535).
ImageF read_png_gray(const std::filesystem::path& path);
void write_png8(const std::filesystem::path& path, const ImageF& image);
void write_png16(const std::filesystem::path& path, const Image<std::uint16_t>& image);
Image<std::uint16_t> read_png16(const std::filesystem::path& path);

}  // namespace gtforge
