#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "viqa/error.hpp"

namespace viqa {

// Planar image with values in [0,1]. Plane c occupies
// data[c*w*h, (c+1)*w*h), each plane row-major.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, int channels, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(width_) * height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int c, int y, int x) { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }
  float at(int c, int y, int x) const { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }

  std::span<float> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const float> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool same_shape(const ImageBuffer& other) const {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

enum class ImageIoErrc { missing_file, unsupported_format, truncated, io_failure };

class ImageIoError : public Error {
 public:
  ImageIoError(ImageIoErrc code, const std::string& what) : Error(what), code_(code) {}
  ImageIoErrc code() const { return code_; }

 private:
  ImageIoErrc code_;
};

// Reads 8-bit PNG or binary PGM (P5) / PPM (P6). Alpha is dropped; gray
// files stay single-channel.
ImageBuffer load_image(const std::filesystem::path& path);

// Writes PNG, or PGM/PPM when the extension is .pgm/.ppm. Values are
// quantized to 8 bits.
void save_image(const ImageBuffer& img, const std::filesystem::path& path);

// Rounds every value to the nearest 8-bit level, the same quantization
// save_image applies.
ImageBuffer quantize_8bit(const ImageBuffer& img);

// BT.601 luma. Single-channel input is returned unchanged.
ImageBuffer to_luma(const ImageBuffer& img);

struct GridIndex {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridIndex&, const GridIndex&) = default;
};

struct Patch {
  ImageBuffer pixels;
  // Patch center minus image center, in pixels.
  double position_x = 0.0;
  double position_y = 0.0;
  GridIndex grid_index;
};

struct PatchSet {
  std::vector<Patch> patches;  // row-major grid order
  int source_width = 0;
  int source_height = 0;
  int patch_size = 0;
};

// Non-overlapping patch_size x patch_size tiling. Throws ShapeError unless
// patch_size divides both dimensions.
PatchSet extract_patch_grid(const ImageBuffer& img, int patch_size);

// Inverse of extract_patch_grid.
ImageBuffer assemble_patches(const PatchSet& set);

}  // namespace viqa
