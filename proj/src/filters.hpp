#pragma once

#include <vector>

#include "viqa/image.hpp"

namespace viqa::detail {

// Single-channel double-precision working plane.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double& operator()(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

Plane plane_from(const ImageBuffer& img, int channel, double scale = 1.0);
Plane multiply(const Plane& a, const Plane& b);

// Normalized 1-D Gaussian taps of the given length.
std::vector<double> gaussian_kernel(int size, double sigma);

// Separable correlation keeping only fully covered positions
// (MATLAB filter2 'valid').
Plane filter_valid(const Plane& src, const std::vector<double>& kernel);

// 2x2 mean followed by decimation; odd trailing rows/columns are dropped.
Plane downsample_mean2(const Plane& src);

// Every second row and column starting at 0.
Plane decimate2(const Plane& src);

}  // namespace viqa::detail
