#include <doctest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "viqa/spherical_metrics.hpp"

using namespace viqa;

namespace {

// Pixel values on a 1/256 grid so that adding a power-of-two offset gives
// exactly the same error at every pixel.
ImageBuffer dyadic_image(int w, int h, int c, std::uint64_t seed) {
  viqa::Rng rng(seed);
  ImageBuffer img(w, h, c);
  for (float& v : img.data()) v = static_cast<float>(32 + rng.below(160)) / 256.0f;
  return img;
}

ImageBuffer uniform_error(const ImageBuffer& ref, float amp) {
  ImageBuffer d = ref;
  for (float& v : d.data()) v += amp;
  return d;
}

ImageBuffer with_block(const ImageBuffer& ref, int top, int size, float amp) {
  ImageBuffer d = ref;
  const int left = ref.width() / 2 - size / 2;
  for (int c = 0; c < d.channels(); ++c) {
    for (int y = top; y < top + size; ++y) {
      for (int x = left; x < left + size; ++x) d.at(c, y, x) += amp;
    }
  }
  return d;
}

}  // namespace

TEST_CASE("identical images give the infinite marker") {
  const ImageBuffer ref = testutil::random_image(128, 64, 3, 1);
  CHECK(s_psnr(ref, ref).infinite);
  CHECK(ws_psnr(ref, ref).infinite);
  CHECK(cpp_psnr(ref, ref).infinite);
  CHECK_THROWS_AS(ws_psnr(ref, ImageBuffer(64, 64, 3)), ShapeError);
  CHECK_THROWS_AS(s_psnr(ref, ImageBuffer(64, 64, 3)), ShapeError);
  CHECK_THROWS_AS(cpp_psnr(ref, ImageBuffer(64, 64, 3)), ShapeError);
}

TEST_CASE("ws_psnr row weights") {
  CHECK(ws_psnr_row_weight(3, 8) == doctest::Approx(std::cos(0.5 * std::numbers::pi / 8)));
  CHECK(ws_psnr_row_weight(0, 1) == doctest::Approx(1.0));
  int best = 0;
  for (int j = 0; j < 9; ++j) {
    if (ws_psnr_row_weight(j, 9) > ws_psnr_row_weight(best, 9)) best = j;
  }
  CHECK(best == 4);
  double sum = 0;
  for (int j = 0; j < 100; ++j) sum += ws_psnr_row_weight(j, 100);
  double normalized = 0;
  for (int j = 0; j < 100; ++j) normalized += ws_psnr_row_weight(j, 100) / sum;
  CHECK(std::abs(normalized - 1.0) <= 1e-12);
}

TEST_CASE("uniform error: spherical metrics agree with PSNR") {
  const ImageBuffer ref = dyadic_image(512, 256, 3, 2);
  const ImageBuffer dist = uniform_error(ref, 0.0625f);
  const double p = psnr(ref, dist).value;
  const double ws = ws_psnr(ref, dist).value;
  CHECK(ws == p);
  CHECK(std::abs(s_psnr(ref, dist).value - ws) < 0.5);
  CHECK(std::abs(cpp_psnr(ref, dist).value - p) < 0.1);
}

TEST_CASE("i.i.d. noise: point-sampled S-PSNR tracks WS-PSNR") {
  const ImageBuffer ref = testutil::random_image(512, 256, 1, 3, 0.2f, 0.8f);
  ImageBuffer dist = ref;
  viqa::Rng rng(4);
  for (float& v : dist.data()) v += static_cast<float>(rng.uniform(-0.1, 0.1));
  SphericalMetricConfig point;
  point.interpolation = Interpolation::nearest;
  CHECK(std::abs(s_psnr(ref, dist, point).value - ws_psnr(ref, dist).value) < 0.5);
  // Bilinear resampling averages neighbouring noise and reads higher.
  CHECK(s_psnr(ref, dist).value > s_psnr(ref, dist, point).value);
}

TEST_CASE("distorted block moved toward the pole") {
  const ImageBuffer ref(512, 256, 1, 0.5f);
  const ImageBuffer equator = with_block(ref, 128 - 16, 32, 0.2f);
  const ImageBuffer pole = with_block(ref, 0, 32, 0.2f);
  CHECK(ws_psnr(ref, pole).value > ws_psnr(ref, equator).value);
  CHECK(s_psnr(ref, pole).value > s_psnr(ref, equator).value);
  CHECK(cpp_psnr(ref, pole).value > cpp_psnr(ref, equator).value);
  CHECK(std::abs(psnr(ref, pole).value - psnr(ref, equator).value) < 0.01);
  CHECK(cpp_psnr(ref, pole).value > psnr(ref, pole).value);
}

TEST_CASE("error in the top row of 2048x1024") {
  const ImageBuffer ref(2048, 1024, 1, 0.5f);
  ImageBuffer dist = ref;
  for (int x = 0; x < 2048; ++x) dist.at(0, 0, x) = 0.7f;
  CHECK(ws_psnr(ref, dist).value - psnr(ref, dist).value > 20.0);
}

TEST_CASE("noise lowers every spherical metric") {
  const ImageBuffer ref = testutil::random_image(256, 128, 1, 5, 0.2f, 0.8f);
  const ImageBuffer a = uniform_error(ref, 0.02f), b = uniform_error(ref, 0.08f);
  CHECK(s_psnr(ref, a).value > s_psnr(ref, b).value);
  CHECK(ws_psnr(ref, a).value > ws_psnr(ref, b).value);
  CHECK(cpp_psnr(ref, a).value > cpp_psnr(ref, b).value);
}

TEST_CASE("configuration is honoured") {
  const ImageBuffer ref = testutil::random_image(128, 64, 1, 6);
  const ImageBuffer dist = uniform_error(ref, 0.03f);
  SphericalMetricConfig nearest;
  nearest.interpolation = Interpolation::nearest;
  nearest.s_psnr_samples = 500;
  CHECK(std::isfinite(s_psnr(ref, dist, nearest).value));
  CHECK(s_psnr(ref, dist, nearest).params_digest != s_psnr(ref, dist).params_digest);
  SphericalMetricConfig small;
  small.cpp_width = 64;
  small.cpp_height = 32;
  CHECK(cpp_psnr(ref, dist, small).value == doctest::Approx(psnr(ref, dist).value).epsilon(1e-3));
  SphericalMetricConfig bad;
  bad.s_psnr_samples = 0;
  CHECK_THROWS_AS(s_psnr(ref, dist, bad), InputError);
}
