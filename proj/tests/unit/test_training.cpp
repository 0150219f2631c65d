#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "test_util.hpp"
#include "viqa/distortion.hpp"
#include "viqa/training.hpp"

using namespace viqa;

namespace {

const double kLn2 = std::numbers::ln2;

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.patch_size = 8;
  cfg.encoder.feature_dim = 4;
  cfg.encoder.conv_channels = {3};
  cfg.encoder.input_filter_radius = 1;
  return cfg;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.patch_size = 16;
  cfg.encoder.feature_dim = 8;
  cfg.encoder.conv_channels = {4, 8};
  return cfg;
}

// Noise ladder over textured references; MOS falls linearly with sigma.
std::vector<TrainSample> noise_dataset(int scenes, int w, int h, std::uint64_t seed) {
  std::vector<TrainSample> out;
  for (int s = 0; s < scenes; ++s) {
    auto ref = std::make_shared<const ImageBuffer>(synth_scene(seed + s, w, h));
    for (double sigma : {0.0, 0.03, 0.06, 0.1, 0.15}) {
      TrainSample t;
      t.ref_image = ref;
      t.dist_image = std::make_shared<const ImageBuffer>(distort(*ref, {DistortionKind::noise, sigma, seed + s}));
      t.mos = 95.0 - 500.0 * sigma;
      t.scene_id = "scene" + std::to_string(s);
      t.codec = "noise";
      t.strength = sigma;
      out.push_back(t);
    }
  }
  return out;
}

std::vector<const TrainSample*> pointers(const std::vector<TrainSample>& v) {
  std::vector<const TrainSample*> p;
  for (const auto& s : v) p.push_back(&s);
  return p;
}

void zero_network(nn::Network& net) {
  for (auto& l : net.layers()) {
    std::fill(l.weights.data.begin(), l.weights.data.end(), 0.0);
    std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0);
  }
}

// Predictor whose every patch quality (and therefore score) equals c.
PredictorModel constant_predictor(double c, Rng& rng) {
  PredictorModel p = PredictorModel::create(tiny_config(), 16, 8, rng);
  zero_network(p.quality_head);
  p.score_offset = c;
  return p;
}

// Last dense layer of the discriminator head (before the sigmoid).
nn::Layer& disc_logit(GuiderModel& g) { return g.disc_head.layers()[g.disc_head.layers().size() - 2]; }

}  // namespace

TEST_CASE("binary cross-entropy") {
  CHECK(bce(0.5, 1.0) == doctest::Approx(kLn2));
  CHECK(bce(0.5, 0.0) == doctest::Approx(kLn2));
  CHECK(std::isfinite(bce(0.0, 1.0)));
  CHECK(std::isfinite(bce(1.0, 0.0)));
  CHECK(bce(0.0, 1.0) == doctest::Approx(-std::log(kProbClamp)));
  CHECK(bce_grad(0.0, 1.0) == 0.0);
  CHECK(bce_grad(0.25, 1.0) == doctest::Approx(-4.0));
  for (double p = 0.01; p < 1.0; p += 0.01) CHECK(bce(p, 1.0) + bce(p, 0.0) >= 2 * kLn2 - 1e-12);
}

TEST_CASE("predictor_loss") {
  const auto data = noise_dataset(2, 16, 8, 1);
  std::vector<TrainSample> batch_store(data.begin(), data.begin() + 4);
  for (auto& s : batch_store) s.mos = 42.0;
  const auto batch = pointers(batch_store);
  Rng rng(2);

  SUBCASE("perfect predictor, lambda 0") {
    const PredictorModel p = constant_predictor(42.0, rng);
    const PredictorLoss l = predictor_loss(p, nullptr, batch, 0.0);
    CHECK(l.loss == 0.0);
    CHECK(l.predictions == std::vector<double>(4, 42.0));
  }
  SUBCASE("offset of ten") {
    const PredictorModel p = constant_predictor(52.0, rng);
    CHECK(predictor_loss(p, nullptr, batch, 0.0).loss == doctest::Approx(100.0));
  }
  SUBCASE("discriminator pinned at one half") {
    const PredictorModel p = constant_predictor(52.0, rng);
    GuiderModel g = GuiderModel::create(tiny_config(), rng);
    zero_network(g.disc_head);
    const PredictorLoss l = predictor_loss(p, &g, batch, 100.0);
    CHECK(l.adversarial == doctest::Approx(kLn2));
    CHECK(l.loss == doctest::Approx(100.0 + 100.0 * kLn2));
  }
  SUBCASE("errors") {
    const PredictorModel p = constant_predictor(1.0, rng);
    CHECK_THROWS_AS(predictor_loss(p, nullptr, {}, 0.0), InputError);
    CHECK_THROWS_AS(predictor_loss(p, nullptr, batch, 1.0), InputError);
  }
}

TEST_CASE("guider_loss") {
  const auto data = noise_dataset(2, 16, 8, 3);
  std::vector<TrainSample> batch_store(data.begin(), data.begin() + 5);
  for (auto& s : batch_store) s.mos = 80.0;
  const auto batch = pointers(batch_store);
  Rng rng(4);
  const PredictorModel p = constant_predictor(20.0, rng);
  GuiderModel g = GuiderModel::create(tiny_config(), rng);

  SUBCASE("both terms at one half") {
    zero_network(g.disc_head);
    CHECK(guider_loss(p, g, batch).loss == doctest::Approx(2 * kLn2));
  }
  SUBCASE("perfect discrimination drives the loss to zero") {
    // Route s/100 through the first unit of every hidden layer, then
    // threshold at 0.5 with a steep logit.
    zero_network(g.disc_head);
    auto& layers = g.disc_head.layers();
    const int score_input = layers.front().hyper[0] - 1;
    layers[0].weights.data[score_input] = 1.0;
    for (std::size_t i = 2; i + 2 < layers.size(); i += 2) layers[i].weights.data[0] = 1.0;
    disc_logit(g).weights.data[0] = 1000.0;
    disc_logit(g).bias.data[0] = -500.0;
    const GuiderLoss l = guider_loss(p, g, batch);
    CHECK(l.loss < 1e-6);
    CHECK(l.accuracy == 1.0);
  }
  SUBCASE("clamped and finite when the discriminator is confidently wrong") {
    zero_network(g.disc_head);
    disc_logit(g).bias.data[0] = -1e4;
    const GuiderLoss l = guider_loss(p, g, batch);
    CHECK(std::isfinite(l.loss));
    CHECK(l.loss == doctest::Approx(-std::log(kProbClamp)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(guider_loss(p, g, {}), InputError);
}

TEST_CASE("gradient isolation") {
  const auto data = noise_dataset(1, 16, 8, 5);
  const auto batch = pointers(data);
  Rng rng(6);
  const PredictorModel p = PredictorModel::create(tiny_config(), 16, 8, rng);
  const GuiderModel g = GuiderModel::create(tiny_config(), rng);

  const PredictorLoss pl = predictor_loss(p, &g, batch, 100.0);
  REQUIRE(pl.guider_grads.has_value());
  CHECK(pl.guider_grads->all_zero());
  CHECK_FALSE(pl.grads.all_zero());

  const GuiderLoss gl = guider_loss(p, g, batch);
  CHECK(gl.predictor_grads.all_zero());
  CHECK_FALSE(gl.grads.all_zero());
}

TEST_CASE("loss gradients match finite differences") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const LossGradCheck r = check_loss_gradients(seed);
    CHECK(r.predictor.max_rel_error < 1e-4);
    CHECK(r.guider.max_rel_error < 1e-4);
    CHECK(r.predictor.checked > 100);
    CHECK(r.guider.checked > 100);
  }
}

TEST_CASE("losses do not depend on the thread count") {
  const auto data = noise_dataset(2, 16, 8, 7);
  const auto batch = pointers(data);
  Rng rng(8);
  const PredictorModel p = PredictorModel::create(tiny_config(), 16, 8, rng);
  const GuiderModel g = GuiderModel::create(tiny_config(), rng);
  const PredictorLoss a = predictor_loss(p, &g, batch, 100.0, 1), b = predictor_loss(p, &g, batch, 100.0, 4);
  CHECK(a.loss == b.loss);
  CHECK(a.grads.flatten() == b.grads.flatten());
  const GuiderLoss c = guider_loss(p, g, batch, 1), d = guider_loss(p, g, batch, 3);
  CHECK(c.loss == d.loss);
  CHECK(c.grads.flatten() == d.grads.flatten());
}

TEST_CASE("train") {
  const auto data = noise_dataset(4, 64, 32, 9);
  TrainConfig cfg;
  cfg.model = small_config();
  cfg.epochs = 6;
  cfg.lr = 1e-3;
  cfg.seed = 3;

  SUBCASE("without critic the training MSE falls over the first five epochs") {
    cfg.adversarial = false;
    const TrainResult r = train(data, cfg);
    CHECK_FALSE(r.guider.has_value());
    REQUIRE(r.history.epochs.size() == 6);
    for (int e = 1; e < 5; ++e) CHECK(r.history.epochs[e].train_mse < r.history.epochs[e - 1].train_mse);
    for (const auto& rec : r.history.epochs) CHECK_FALSE(rec.loss_d.has_value());
    CHECK(r.history.to_json_lines().find("loss_d") == std::string::npos);
  }
  SUBCASE("same seed, same history and parameters") {
    cfg.epochs = 2;
    const TrainResult a = train(data, cfg), b = train(data, cfg);
    CHECK(a.history.to_json_lines() == b.history.to_json_lines());
    CHECK(a.predictor.encoder == b.predictor.encoder);
    CHECK(a.guider->disc_head == b.guider->disc_head);
    CHECK(a.history.epochs[0].loss_d.has_value());
  }
  SUBCASE("lambda 0 with a critic leaves the predictor trajectory unchanged") {
    cfg.epochs = 2;
    cfg.lambda = 0.0;
    const TrainResult with = train(data, cfg);
    cfg.adversarial = false;
    const TrainResult without = train(data, cfg);
    CHECK(with.predictor.encoder == without.predictor.encoder);
    CHECK(with.predictor.weight_head == without.predictor.weight_head);
    CHECK(with.predictor.quality_head == without.predictor.quality_head);
  }
  SUBCASE("validation metrics are recorded per epoch") {
    cfg.epochs = 1;
    cfg.adversarial = false;
    const TrainResult r = train(data, cfg, &data);
    REQUIRE(r.history.epochs[0].validation.has_value());
    CHECK(r.history.epochs[0].validation->n == data.size());
  }
  SUBCASE("bad input") {
    CHECK_THROWS_AS(train({}, cfg), InputError);
    auto mixed = data;
    mixed[1].dist_image = std::make_shared<const ImageBuffer>(64, 16, 3);
    CHECK_THROWS_AS(train(mixed, cfg), ShapeError);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train(data, cfg), InputError);
  }
  SUBCASE("non-finite loss aborts") {
    auto poisoned = data;
    poisoned[0].mos = std::nan("");
    cfg.adversarial = false;
    CHECK_THROWS_AS(train(poisoned, cfg), NumericError);
  }
}

TEST_CASE("kfold_split") {
  std::vector<TrainSample> samples;
  for (int s = 0; s < 60; ++s) {
    for (int d = 0; d < 12; ++d) {
      TrainSample t;
      t.scene_id = "s" + std::to_string(s);
      samples.push_back(t);
    }
  }
  const auto folds = kfold_split(samples, 5, 11);
  REQUIRE(folds.size() == 5);
  std::set<std::string> all;
  for (const Fold& f : folds) {
    CHECK(f.test_scenes.size() == 12);
    CHECK(f.test.size() == 144);
    CHECK(f.train.size() == 576);
    std::set<std::string> test_ids, train_ids;
    for (std::size_t i : f.test) test_ids.insert(samples[i].scene_id);
    for (std::size_t i : f.train) train_ids.insert(samples[i].scene_id);
    for (const auto& id : test_ids) CHECK(train_ids.count(id) == 0);
    for (const auto& id : f.test_scenes) CHECK(all.insert(id).second);
  }
  CHECK(all.size() == 60);

  SUBCASE("uneven split") {
    std::vector<TrainSample> few(samples.begin(), samples.begin() + 7 * 12);
    std::size_t lo = 100, hi = 0;
    for (const Fold& f : kfold_split(few, 5, 1)) {
      lo = std::min(lo, f.test_scenes.size());
      hi = std::max(hi, f.test_scenes.size());
    }
    CHECK(hi - lo <= 1);
  }
  CHECK(kfold_split(samples, 5, 11)[2].test_scenes == folds[2].test_scenes);
  CHECK_THROWS_AS(kfold_split(samples, 1, 1), InputError);
  CHECK_THROWS_AS(kfold_split(std::vector<TrainSample>(samples.begin(), samples.begin() + 36), 5, 1), InputError);
}

TEST_CASE("cross_validate") {
  const auto data = noise_dataset(4, 32, 16, 12);
  TrainConfig cfg;
  cfg.model = tiny_config();
  cfg.epochs = 1;
  cfg.adversarial = false;
  int calls = 0;
  const CrossValidation cv = cross_validate(data, 2, 5, cfg, AggregateMode::pooled, [&](int, const EpochRecord&) {
    ++calls;
  });
  CHECK(calls == 2);
  CHECK(cv.report.per_fold.size() == 2);
  CHECK(cv.report.aggregate.n == data.size());
  CHECK(cv.fold_predictions[0].size() + cv.fold_predictions[1].size() == data.size());
}
