#pragma once

#include "viqa/metrics.hpp"
#include "viqa/sphere.hpp"

namespace viqa {

struct SphericalMetricConfig {
  int s_psnr_samples = 10000;
  Interpolation interpolation = Interpolation::bilinear;
  // Zero means "same as the input image".
  int cpp_width = 0;
  int cpp_height = 0;
};

// PSNR over Fibonacci-lattice directions sampled from both images.
MetricResult s_psnr(const ImageBuffer& ref, const ImageBuffer& dist, const SphericalMetricConfig& cfg = {});

// Row weight used by ws_psnr: cos((j + 0.5 - h/2) * pi / h).
double ws_psnr_row_weight(int row, int height);

// Equirectangular PSNR with cosine-latitude row weights.
MetricResult ws_psnr(const ImageBuffer& ref, const ImageBuffer& dist);

// PSNR between both images resampled onto the Craster parabolic raster,
// counting only pixels inside the projection footprint.
MetricResult cpp_psnr(const ImageBuffer& ref, const ImageBuffer& dist, const SphericalMetricConfig& cfg = {});

}  // namespace viqa
