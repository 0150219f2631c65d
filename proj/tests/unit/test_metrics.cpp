#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "viqa/distortion.hpp"
#include "viqa/metrics.hpp"

using namespace viqa;

namespace {

ImageBuffer add_noise(const ImageBuffer& img, double sigma, std::uint64_t seed) {
  return distort(img, {DistortionKind::noise, sigma, seed});
}

ImageBuffer blur(const ImageBuffer& img, double sigma) { return distort(img, {DistortionKind::blur, sigma, 0}); }

ImageBuffer scene(int w = 192, int h = 192) { return synth_scene(77, w, h); }

}  // namespace

TEST_CASE("psnr") {
  const ImageBuffer ref = testutil::random_image(32, 16, 3, 1, 0.1f, 0.8f);
  const MetricResult same = psnr(ref, ref);
  CHECK(same.infinite);
  CHECK(std::isinf(same.value));

  ImageBuffer shifted = ref;
  for (float& v : shifted.data()) v += 0.1f;
  CHECK(psnr(ref, shifted).value == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(psnr(ref, shifted, {.luma = true}).value == doctest::Approx(20.0).epsilon(1e-5));

  const double p1 = psnr(ref, add_noise(ref, 0.01, 3)).value;
  const double p2 = psnr(ref, add_noise(ref, 0.02, 3)).value;
  const double p5 = psnr(ref, add_noise(ref, 0.05, 3)).value;
  CHECK(p1 > p2);
  CHECK(p2 > p5);

  CHECK_THROWS_AS(psnr(ref, ImageBuffer(16, 16, 3)), ShapeError);
  CHECK_FALSE(same.params_digest.empty());
}

TEST_CASE("ssim") {
  const ImageBuffer x = scene(64, 48);
  CHECK(ssim(x, x).value == doctest::Approx(1.0).epsilon(1e-9));

  ImageBuffer bin(11, 11, 1), inv(11, 11, 1);
  for (int y = 0; y < 11; ++y) {
    for (int c = 0; c < 11; ++c) {
      bin.at(0, y, c) = static_cast<float>((y * 7 + c * 3) % 2);
      inv.at(0, y, c) = 1.0f - bin.at(0, y, c);
    }
  }
  CHECK(ssim(bin, inv).value < 0.2);

  const ImageBuffer d = add_noise(x, 0.05, 9);
  CHECK(std::abs(ssim(x, d).value - ssim(d, x).value) <= 1e-12);

  for (double v : ssim_map(x, d)) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(ssim(ImageBuffer(10, 10, 1), ImageBuffer(10, 10, 1)), ShapeError);
}

TEST_CASE("ms_ssim") {
  const ImageBuffer x = scene();
  CHECK(ms_ssim(x, x).value == doctest::Approx(1.0).epsilon(1e-9));
  const double b05 = ms_ssim(x, blur(x, 0.5)).value;
  const double b1 = ms_ssim(x, blur(x, 1.0)).value;
  const double b2 = ms_ssim(x, blur(x, 2.0)).value;
  CHECK(b05 > b1);
  CHECK(b1 > b2);
  for (double v : {b05, b1, b2}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(ms_ssim(ImageBuffer(175, 200, 1), ImageBuffer(175, 200, 1)), ShapeError);
}

TEST_CASE("vifp") {
  const ImageBuffer x = scene();
  CHECK(vifp(x, x).value == doctest::Approx(1.0).epsilon(1e-6));
  const double n1 = vifp(x, add_noise(x, 0.01, 4)).value;
  const double n5 = vifp(x, add_noise(x, 0.05, 4)).value;
  const double n10 = vifp(x, add_noise(x, 0.1, 4)).value;
  CHECK(n1 > n5);
  CHECK(n5 > n10);

  SUBCASE("contrast boost can exceed one") {
    ImageBuffer dim = x;
    for (float& v : dim.data()) v *= 0.7f;
    ImageBuffer boosted = dim;
    for (float& v : boosted.data()) v *= 1.2f;
    CHECK(vifp(dim, boosted).value > 1.0);
  }

  SUBCASE("asymmetric on a noise pair") {
    const ImageBuffer d = add_noise(x, 0.05, 5);
    CHECK(vifp(x, d).value != doctest::Approx(vifp(d, x).value).epsilon(1e-3));
  }

  CHECK_THROWS_AS(vifp(ImageBuffer(64, 64, 1, 0.5f), ImageBuffer(64, 64, 1, 0.5f)), NumericError);
}

TEST_CASE("all four metrics rank a blur ladder identically") {
  const ImageBuffer x = scene();
  std::vector<ImageBuffer> ladder;
  for (double s : {0.5, 1.0, 2.0, 3.0}) ladder.push_back(blur(x, s));
  for (std::size_t i = 0; i + 1 < ladder.size(); ++i) {
    CHECK(psnr(x, ladder[i]).value > psnr(x, ladder[i + 1]).value);
    CHECK(ssim(x, ladder[i]).value > ssim(x, ladder[i + 1]).value);
    CHECK(ms_ssim(x, ladder[i]).value > ms_ssim(x, ladder[i + 1]).value);
    CHECK(vifp(x, ladder[i]).value > vifp(x, ladder[i + 1]).value);
  }
}

TEST_CASE("metrics are deterministic") {
  const ImageBuffer x = scene();
  const ImageBuffer d = add_noise(x, 0.03, 6);
  CHECK(ssim(x, d).value == ssim(x, d).value);
  CHECK(ms_ssim(x, d).value == ms_ssim(x, d).value);
  CHECK(vifp(x, d).value == vifp(x, d).value);
  CHECK(ms_ssim(x, d).params_digest == ms_ssim(x, d).params_digest);
}
