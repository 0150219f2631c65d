#include "viqa/spherical_metrics.hpp"

#include <cmath>
#include <sstream>

namespace viqa {

namespace {

void require_same_shape(const ImageBuffer& ref, const ImageBuffer& dist, std::string_view metric) {
  if (!ref.same_shape(dist) || ref.empty()) {
    throw ShapeError(std::string(metric) + ": reference and distorted images must share non-empty dimensions");
  }
}

std::string_view interpolation_name(Interpolation mode) {
  return mode == Interpolation::bilinear ? "bilinear" : "nearest";
}

}  // namespace

MetricResult s_psnr(const ImageBuffer& ref, const ImageBuffer& dist, const SphericalMetricConfig& cfg) {
  require_same_shape(ref, dist, "s_psnr");
  if (cfg.s_psnr_samples < 1) throw InputError("s_psnr: sample count must be >= 1");
  const auto dirs = fibonacci_sphere(cfg.s_psnr_samples);
  double sum = 0.0;
  for (const SphereDir& dir : dirs) {
    const PixelCoord p = sphere_to_equirect(dir, ref.width(), ref.height());
    const auto a = sample(ref, p.x, p.y, cfg.interpolation);
    const auto b = sample(dist, p.x, p.y, cfg.interpolation);
    for (std::size_t c = 0; c < a.size(); ++c) {
      const double d = a[c] - b[c];
      sum += d * d;
    }
  }
  std::ostringstream digest;
  digest << "samples=" << cfg.s_psnr_samples << ";lattice=fibonacci;interp=" << interpolation_name(cfg.interpolation)
         << ";max=1";
  return psnr_from_mse(MetricId::s_psnr, sum / (static_cast<double>(dirs.size()) * ref.channels()), digest.str());
}

double ws_psnr_row_weight(int row, int height) {
  return std::cos((row + 0.5 - height / 2.0) * std::numbers::pi / height);
}

MetricResult ws_psnr(const ImageBuffer& ref, const ImageBuffer& dist) {
  require_same_shape(ref, dist, "ws_psnr");
  double weighted = 0.0;
  double weight_sum = 0.0;
  const std::size_t row_samples = static_cast<std::size_t>(ref.width()) * ref.channels();
  for (int y = 0; y < ref.height(); ++y) {
    double row_sum = 0.0;
    for (int c = 0; c < ref.channels(); ++c) {
      for (int x = 0; x < ref.width(); ++x) {
        const double d = static_cast<double>(ref.at(c, y, x)) - dist.at(c, y, x);
        row_sum += d * d;
      }
    }
    const double w = ws_psnr_row_weight(y, ref.height());
    weighted += w * row_sum;
    weight_sum += w * static_cast<double>(row_samples);
  }
  return psnr_from_mse(MetricId::ws_psnr, weighted / weight_sum, "weights=cos_latitude_rows;max=1");
}

MetricResult cpp_psnr(const ImageBuffer& ref, const ImageBuffer& dist, const SphericalMetricConfig& cfg) {
  require_same_shape(ref, dist, "cpp_psnr");
  const int w = cfg.cpp_width > 0 ? cfg.cpp_width : ref.width();
  const int h = cfg.cpp_height > 0 ? cfg.cpp_height : ref.height();
  const CppRaster a = cpp_resample(ref, w, h, cfg.interpolation);
  const CppRaster b = cpp_resample(dist, w, h, cfg.interpolation);
  double sum = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < ref.channels(); ++c) {
    const auto pa = a.image.plane(c);
    const auto pb = b.image.plane(c);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (!a.valid[i]) continue;
      const double d = static_cast<double>(pa[i]) - pb[i];
      sum += d * d;
      ++count;
    }
  }
  if (count == 0) throw NumericError("cpp_psnr: projection footprint contains no pixels");
  std::ostringstream digest;
  digest << "raster=" << w << "x" << h << ";interp=" << interpolation_name(cfg.interpolation)
         << ";outside_footprint=excluded;max=1";
  return psnr_from_mse(MetricId::cpp_psnr, sum / static_cast<double>(count), digest.str());
}

}  // namespace viqa
