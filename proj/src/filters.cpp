#include "filters.hpp"

#include <cmath>

namespace viqa::detail {

Plane plane_from(const ImageBuffer& img, int channel, double scale) {
  Plane p(img.width(), img.height());
  const auto src = img.plane(channel);
  for (std::size_t i = 0; i < src.size(); ++i) p.data[i] = scale * src[i];
  return p;
}

Plane multiply(const Plane& a, const Plane& b) {
  Plane out(a.width, a.height);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double center = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - center;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

Plane filter_valid(const Plane& src, const std::vector<double>& kernel) {
  const int n = static_cast<int>(kernel.size());
  const int out_w = src.width - n + 1;
  const int out_h = src.height - n + 1;
  if (out_w <= 0 || out_h <= 0) return Plane(0, 0);
  Plane horiz(out_w, src.height);
  for (int y = 0; y < src.height; ++y) {
    const double* row = &src.data[static_cast<std::size_t>(y) * src.width];
    double* dst = &horiz.data[static_cast<std::size_t>(y) * out_w];
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += kernel[k] * row[x + k];
      dst[x] = acc;
    }
  }
  Plane out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    double* dst = &out.data[static_cast<std::size_t>(y) * out_w];
    for (int k = 0; k < n; ++k) {
      const double* row = &horiz.data[static_cast<std::size_t>(y + k) * out_w];
      const double wk = kernel[k];
      for (int x = 0; x < out_w; ++x) dst[x] += wk * row[x];
    }
  }
  return out;
}

Plane downsample_mean2(const Plane& src) {
  Plane out(src.width / 2, src.height / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out(y, x) = 0.25 * (src(2 * y, 2 * x) + src(2 * y, 2 * x + 1) + src(2 * y + 1, 2 * x) + src(2 * y + 1, 2 * x + 1));
    }
  }
  return out;
}

Plane decimate2(const Plane& src) {
  Plane out((src.width + 1) / 2, (src.height + 1) / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out(y, x) = src(2 * y, 2 * x);
  }
  return out;
}

}  // namespace viqa::detail
