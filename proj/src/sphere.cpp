#include "viqa/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace viqa {

namespace {

constexpr double kPi = std::numbers::pi;

int wrap_index(long i, int n) {
  const long m = i % n;
  return static_cast<int>(m < 0 ? m + n : m);
}

double wrap_lon(double lon) {
  double l = std::fmod(lon + kPi, 2.0 * kPi);
  if (l < 0) l += 2.0 * kPi;
  return l - kPi;
}

}  // namespace

std::array<double, 3> SphereDir::unit_vector() const {
  return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat)};
}

SphereDir equirect_to_sphere(int u, int v, int width, int height) {
  if (width <= 0 || height <= 0 || u < 0 || u >= width || v < 0 || v >= height) {
    throw InputError("pixel (" + std::to_string(u) + ", " + std::to_string(v) + ") outside " +
                     std::to_string(width) + "x" + std::to_string(height));
  }
  return {(0.5 - (v + 0.5) / height) * kPi, ((u + 0.5) / width - 0.5) * 2.0 * kPi};
}

PixelCoord sphere_to_equirect(const SphereDir& dir, int width, int height) {
  return {(dir.lon / (2.0 * kPi) + 0.5) * width - 0.5, (0.5 - dir.lat / kPi) * height - 0.5};
}

std::vector<SphereDir> fibonacci_sphere(int n) {
  if (n < 1) throw InputError("fibonacci_sphere needs at least one point");
  const double golden_angle = kPi * (3.0 - std::sqrt(5.0));
  std::vector<SphereDir> dirs;
  dirs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    dirs.push_back({std::asin(z), wrap_lon(golden_angle * i)});
  }
  return dirs;
}

std::vector<double> bilinear_sample(const ImageBuffer& img, double x, double y) {
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const double ax = x - fx0;
  const double ay = y - fy0;
  const int x0 = wrap_index(static_cast<long>(fx0), img.width());
  const int x1 = wrap_index(static_cast<long>(fx0) + 1, img.width());
  const int y0 = std::clamp(static_cast<int>(fy0), 0, img.height() - 1);
  const int y1 = std::clamp(static_cast<int>(fy0) + 1, 0, img.height() - 1);
  std::vector<double> out(static_cast<std::size_t>(img.channels()));
  for (int c = 0; c < img.channels(); ++c) {
    const double top = (1.0 - ax) * img.at(c, y0, x0) + ax * img.at(c, y0, x1);
    const double bottom = (1.0 - ax) * img.at(c, y1, x0) + ax * img.at(c, y1, x1);
    out[c] = (1.0 - ay) * top + ay * bottom;
  }
  return out;
}

std::vector<double> nearest_sample(const ImageBuffer& img, double x, double y) {
  const int xi = wrap_index(std::lround(x), img.width());
  const int yi = std::clamp(static_cast<int>(std::lround(y)), 0, img.height() - 1);
  std::vector<double> out(static_cast<std::size_t>(img.channels()));
  for (int c = 0; c < img.channels(); ++c) out[c] = img.at(c, yi, xi);
  return out;
}

std::vector<double> sample(const ImageBuffer& img, double x, double y, Interpolation mode) {
  return mode == Interpolation::bilinear ? bilinear_sample(img, x, y) : nearest_sample(img, x, y);
}

PlanePoint cpp_forward(const SphereDir& dir) {
  return {std::sqrt(3.0 / kPi) * dir.lon * (2.0 * std::cos(2.0 * dir.lat / 3.0) - 1.0),
          std::sqrt(3.0 * kPi) * std::sin(dir.lat / 3.0)};
}

bool cpp_inverse(const PlanePoint& p, SphereDir& out) {
  const double s = p.y / std::sqrt(3.0 * kPi);
  if (std::abs(s) > 0.5) return false;
  const double lat = 3.0 * std::asin(s);
  const double scale = std::sqrt(3.0 / kPi) * (2.0 * std::cos(2.0 * lat / 3.0) - 1.0);
  if (scale <= 1e-12) {
    if (std::abs(p.x) > 1e-12) return false;
    out = {lat, 0.0};
    return true;
  }
  const double lon = p.x / scale;
  if (lon < -kPi || lon >= kPi) return false;
  out = {lat, lon};
  return true;
}

CppRaster cpp_resample(const ImageBuffer& img, int out_w, int out_h, Interpolation mode) {
  if (out_w <= 0 || out_h <= 0) throw InputError("CPP raster dimensions must be positive");
  if (img.empty()) throw InputError("cannot resample an empty image");
  CppRaster raster{ImageBuffer(out_w, out_h, img.channels()),
                   std::vector<unsigned char>(static_cast<std::size_t>(out_w) * out_h, 0)};
  const double hw = cpp_half_width();
  const double hh = cpp_half_height();
  for (int j = 0; j < out_h; ++j) {
    const double py = (0.5 - (j + 0.5) / out_h) * 2.0 * hh;
    for (int i = 0; i < out_w; ++i) {
      const double px = ((i + 0.5) / out_w - 0.5) * 2.0 * hw;
      SphereDir dir;
      if (!cpp_inverse({px, py}, dir)) continue;
      const PixelCoord src = sphere_to_equirect(dir, img.width(), img.height());
      const auto values = sample(img, src.x, src.y, mode);
      for (int c = 0; c < img.channels(); ++c) raster.image.at(c, j, i) = static_cast<float>(values[c]);
      raster.valid[static_cast<std::size_t>(j) * out_w + i] = 1;
    }
  }
  return raster;
}

}  // namespace viqa
