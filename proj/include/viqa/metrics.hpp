#pragma once

#include <limits>
#include <string>
#include <string_view>

#include "viqa/image.hpp"

namespace viqa {

enum class MetricId { psnr, ssim, ms_ssim, vifp, s_psnr, ws_psnr, cpp_psnr };

std::string_view metric_name(MetricId id);

struct MetricResult {
  MetricId id = MetricId::psnr;
  double value = 0.0;
  // Identical inputs under a PSNR-family metric; value is +inf.
  bool infinite = false;
  std::string params_digest;
};

// 10*log10(1/mse) for normalized data; an exact zero yields the infinite marker.
MetricResult psnr_from_mse(MetricId id, double mse, std::string params_digest);

struct PsnrOptions {
  bool luma = false;  // default averages the squared error over all channels
};

MetricResult psnr(const ImageBuffer& ref, const ImageBuffer& dist, PsnrOptions opts = {});

// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03, L 1,
// computed on luma over fully covered window positions.
MetricResult ssim(const ImageBuffer& ref, const ImageBuffer& dist);

// Local SSIM values, one per window position.
std::vector<double> ssim_map(const ImageBuffer& ref, const ImageBuffer& dist);

// Five dyadic scales, exponents 0.0448/0.2856/0.3001/0.2363/0.1333.
// Requires min(width, height) >= 176.
MetricResult ms_ssim(const ImageBuffer& ref, const ImageBuffer& dist);

// Pixel-domain VIF over four scales, sigma_n^2 = 2 on the 0-255 scale.
// Asymmetric: ref is the reference.
MetricResult vifp(const ImageBuffer& ref, const ImageBuffer& dist);

}  // namespace viqa
