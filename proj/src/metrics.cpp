#include "viqa/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "filters.hpp"

namespace viqa {

using detail::Plane;

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr int kMsSsimScales = 5;
constexpr int kVifScales = 4;
constexpr double kVifNoiseVar = 2.0;  // on the 0-255 scale
constexpr double kVifEps = 1e-10;

void require_same_shape(const ImageBuffer& ref, const ImageBuffer& dist, std::string_view metric) {
  if (!ref.same_shape(dist)) {
    std::ostringstream msg;
    msg << metric << ": dimension mismatch " << ref.width() << "x" << ref.height() << "x" << ref.channels() << " vs "
        << dist.width() << "x" << dist.height() << "x" << dist.channels();
    throw ShapeError(msg.str());
  }
  if (ref.empty()) throw ShapeError(std::string(metric) + ": empty image");
}

struct SsimMeans {
  double ssim = 0.0;  // mean of the full SSIM map
  double cs = 0.0;    // mean of the contrast-structure map
  std::vector<double> map;
};

SsimMeans ssim_planes(const Plane& x, const Plane& y, bool keep_map) {
  const auto window = detail::gaussian_kernel(kSsimWindow, kSsimSigma);
  const Plane mu_x = detail::filter_valid(x, window);
  const Plane mu_y = detail::filter_valid(y, window);
  const Plane xx = detail::filter_valid(detail::multiply(x, x), window);
  const Plane yy = detail::filter_valid(detail::multiply(y, y), window);
  const Plane xy = detail::filter_valid(detail::multiply(x, y), window);
  SsimMeans out;
  const std::size_t n = mu_x.data.size();
  if (keep_map) out.map.resize(n);
  double ssim_sum = 0.0;
  double cs_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mx = mu_x.data[i];
    const double my = mu_y.data[i];
    const double vx = xx.data[i] - mx * mx;
    const double vy = yy.data[i] - my * my;
    const double cov = xy.data[i] - mx * my;
    const double cs = (2.0 * cov + kC2) / (vx + vy + kC2);
    const double l = (2.0 * mx * my + kC1) / (mx * mx + my * my + kC1);
    const double s = l * cs;
    ssim_sum += s;
    cs_sum += cs;
    if (keep_map) out.map[i] = s;
  }
  out.ssim = ssim_sum / static_cast<double>(n);
  out.cs = cs_sum / static_cast<double>(n);
  return out;
}

void require_window(const ImageBuffer& img, int window, std::string_view metric) {
  if (img.width() < window || img.height() < window) {
    throw ShapeError(std::string(metric) + ": image smaller than the " + std::to_string(window) + "px window");
  }
}

}  // namespace

std::string_view metric_name(MetricId id) {
  switch (id) {
    case MetricId::psnr: return "psnr";
    case MetricId::ssim: return "ssim";
    case MetricId::ms_ssim: return "ms_ssim";
    case MetricId::vifp: return "vifp";
    case MetricId::s_psnr: return "s_psnr";
    case MetricId::ws_psnr: return "ws_psnr";
    case MetricId::cpp_psnr: return "cpp_psnr";
  }
  return "unknown";
}

MetricResult psnr_from_mse(MetricId id, double mse, std::string params_digest) {
  MetricResult r{id, 0.0, false, std::move(params_digest)};
  if (mse == 0.0) {
    r.infinite = true;
    r.value = std::numeric_limits<double>::infinity();
  } else {
    r.value = 10.0 * std::log10(1.0 / mse);
  }
  return r;
}

MetricResult psnr(const ImageBuffer& ref, const ImageBuffer& dist, PsnrOptions opts) {
  require_same_shape(ref, dist, "psnr");
  const ImageBuffer a = opts.luma ? to_luma(ref) : ref;
  const ImageBuffer b = opts.luma ? to_luma(dist) : dist;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    sum += d * d;
  }
  return psnr_from_mse(MetricId::psnr, sum / static_cast<double>(a.size()),
                       opts.luma ? "max=1;mse=luma_bt601" : "max=1;mse=mean_all_channels");
}

std::vector<double> ssim_map(const ImageBuffer& ref, const ImageBuffer& dist) {
  require_same_shape(ref, dist, "ssim");
  require_window(ref, kSsimWindow, "ssim");
  return ssim_planes(detail::plane_from(to_luma(ref), 0), detail::plane_from(to_luma(dist), 0), true).map;
}

MetricResult ssim(const ImageBuffer& ref, const ImageBuffer& dist) {
  require_same_shape(ref, dist, "ssim");
  require_window(ref, kSsimWindow, "ssim");
  const auto means = ssim_planes(detail::plane_from(to_luma(ref), 0), detail::plane_from(to_luma(dist), 0), false);
  return {MetricId::ssim, means.ssim, false, "window=gaussian11;sigma=1.5;K1=0.01;K2=0.03;L=1;luma=bt601"};
}

MetricResult ms_ssim(const ImageBuffer& ref, const ImageBuffer& dist) {
  require_same_shape(ref, dist, "ms_ssim");
  const int min_dim = kSsimWindow << (kMsSsimScales - 1);
  if (std::min(ref.width(), ref.height()) < min_dim) {
    throw ShapeError("ms_ssim: needs min dimension >= " + std::to_string(min_dim) + " for 5 scales");
  }
  Plane x = detail::plane_from(to_luma(ref), 0);
  Plane y = detail::plane_from(to_luma(dist), 0);
  double value = 1.0;
  for (int scale = 0; scale < kMsSsimScales; ++scale) {
    const auto means = ssim_planes(x, y, false);
    // Negative per-scale terms are floored at zero so fractional powers stay real.
    const double term = scale + 1 < kMsSsimScales ? means.cs : means.ssim;
    value *= std::pow(std::max(term, 0.0), kMsSsimWeights[scale]);
    if (scale + 1 < kMsSsimScales) {
      x = detail::downsample_mean2(x);
      y = detail::downsample_mean2(y);
    }
  }
  return {MetricId::ms_ssim, value, false,
          "scales=5;weights=0.0448,0.2856,0.3001,0.2363,0.1333;downsample=mean2x2;window=gaussian11;"
          "sigma=1.5;K1=0.01;K2=0.03;L=1;negative_terms=floored_at_0"};
}

MetricResult vifp(const ImageBuffer& ref, const ImageBuffer& dist) {
  require_same_shape(ref, dist, "vifp");
  require_window(ref, (1 << kVifScales) + 1, "vifp");
  Plane x = detail::plane_from(to_luma(ref), 0, 255.0);
  Plane y = detail::plane_from(to_luma(dist), 0, 255.0);
  double num = 0.0;
  double den = 0.0;
  for (int scale = 1; scale <= kVifScales; ++scale) {
    const int n = (1 << (kVifScales + 1 - scale)) + 1;
    const auto window = detail::gaussian_kernel(n, n / 5.0);
    if (scale > 1) {
      x = detail::decimate2(detail::filter_valid(x, window));
      y = detail::decimate2(detail::filter_valid(y, window));
    }
    if (x.width < n || x.height < n) break;
    const Plane mu_x = detail::filter_valid(x, window);
    const Plane mu_y = detail::filter_valid(y, window);
    const Plane xx = detail::filter_valid(detail::multiply(x, x), window);
    const Plane yy = detail::filter_valid(detail::multiply(y, y), window);
    const Plane xy = detail::filter_valid(detail::multiply(x, y), window);
    for (std::size_t i = 0; i < mu_x.data.size(); ++i) {
      double var_x = std::max(xx.data[i] - mu_x.data[i] * mu_x.data[i], 0.0);
      const double var_y = std::max(yy.data[i] - mu_y.data[i] * mu_y.data[i], 0.0);
      const double cov = xy.data[i] - mu_x.data[i] * mu_y.data[i];
      double g = cov / (var_x + kVifEps);
      double sv = var_y - g * cov;
      // Flat reference windows carry no information and drop out of both sums.
      if (var_x < kVifEps) {
        g = 0.0;
        sv = var_y;
        var_x = 0.0;
      }
      if (var_y < kVifEps) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = var_y;
        g = 0.0;
      }
      sv = std::max(sv, kVifEps);
      num += std::log10(1.0 + g * g * var_x / (sv + kVifNoiseVar));
      den += std::log10(1.0 + var_x / kVifNoiseVar);
    }
  }
  if (den <= 0.0) throw NumericError("vifp: reference has no variance at any scale");
  return {MetricId::vifp, num / den, false,
          "domain=pixel;scales=4;window=gaussian(2^(5-s)+1,sigma=N/5);sigma_n2=2@255;luma=bt601"};
}

}  // namespace viqa
