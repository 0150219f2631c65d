#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "viqa/image.hpp"

namespace viqa {

struct SphereDir {
  double lat = 0.0;  // [-pi/2, pi/2]
  double lon = 0.0;  // [-pi, pi)

  std::array<double, 3> unit_vector() const;
};

struct PlanePoint {
  double x = 0.0;
  double y = 0.0;
};

struct PixelCoord {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

enum class Interpolation { bilinear, nearest };

// Pixel-center convention: column u maps to lon ((u+0.5)/w - 0.5)*2pi, row v
// to lat (0.5 - (v+0.5)/h)*pi.
SphereDir equirect_to_sphere(int u, int v, int width, int height);
PixelCoord sphere_to_equirect(const SphereDir& dir, int width, int height);

// Deterministic Fibonacci lattice of n near-uniform directions.
std::vector<SphereDir> fibonacci_sphere(int n);

// Bilinear sample of every channel. Columns wrap modulo width (the 180 degree
// seam), rows clamp.
std::vector<double> bilinear_sample(const ImageBuffer& img, double x, double y);
std::vector<double> nearest_sample(const ImageBuffer& img, double x, double y);
std::vector<double> sample(const ImageBuffer& img, double x, double y, Interpolation mode);

// Craster parabolic (equal-area) projection.
PlanePoint cpp_forward(const SphereDir& dir);
// Returns false when the point lies outside the projection footprint.
bool cpp_inverse(const PlanePoint& p, SphereDir& out);

// Half extents of the projection's bounding box.
inline double cpp_half_width() { return std::sqrt(3.0 * std::numbers::pi); }
inline double cpp_half_height() { return std::sqrt(3.0 * std::numbers::pi) / 2.0; }

struct CppRaster {
  ImageBuffer image;
  std::vector<unsigned char> valid;  // 1 inside the footprint, row-major
};

// Resamples an equirectangular image onto an out_w x out_h Craster raster
// spanning the projection's bounding box.
CppRaster cpp_resample(const ImageBuffer& img, int out_w, int out_h,
                       Interpolation mode = Interpolation::bilinear);

}  // namespace viqa
