#include "viqa/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "viqa/error.hpp"
#include "viqa/parallel.hpp"

namespace viqa {

using nn::Tensor;

double bce(double p, double target) {
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -(target * std::log(q) + (1.0 - target) * std::log(1.0 - q));
}

double bce_grad(double p, double target) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  return -target / p + (1.0 - target) / (1.0 - p);
}

namespace {

void require_batch(std::span<const TrainSample* const> batch) {
  if (batch.empty()) throw InputError("empty batch");
  for (const TrainSample* s : batch) {
    if (!s || !s->dist_image || !s->ref_image) throw InputError("batch sample without images");
  }
}

struct PredictorSample {
  double prediction = 0.0;
  double sq_error = 0.0;
  double adversarial = 0.0;
  PredictorGrads grads;
};

struct GuiderSample {
  double loss = 0.0;
  int correct = 0;
  GuiderGrads grads;
};

}  // namespace

PredictorLoss predictor_loss(const PredictorModel& p, const GuiderModel* d, std::span<const TrainSample* const> batch,
                             double lambda, int threads) {
  require_batch(batch);
  const bool use_critic = lambda != 0.0;
  if (use_critic && d == nullptr) throw InputError("predictor_loss: nonzero lambda needs a guider");
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  std::vector<PredictorSample> per(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const TrainSample& s = *batch[i];
    PredictorPass pass(p, *s.dist_image);
    PredictorSample& out = per[i];
    out.prediction = pass.score();
    const double err = out.prediction - s.mos;
    out.sq_error = err * err;
    double score_grad = 2.0 * err * inv_b;
    if (use_critic) {
      GuiderFeatures feats(*d, *s.dist_image, *s.ref_image);
      const nn::Trace head = nn::forward(d->disc_head, feats.disc_input(out.prediction));
      const double prob = head.output().data[0];
      out.adversarial = bce(prob, 1.0);
      const DiscGradient g = disc_backward(*d, head, lambda * bce_grad(prob, 1.0) * inv_b, nullptr);
      score_grad += g.score;
    }
    out.grads = PredictorGrads::zeros_like(p);
    pass.backward(score_grad, out.grads);
  });

  PredictorLoss result;
  result.grads = PredictorGrads::zeros_like(p);
  for (const PredictorSample& s : per) {
    result.mse += s.sq_error * inv_b;
    result.adversarial += s.adversarial * inv_b;
    result.predictions.push_back(s.prediction);
    result.grads.add(s.grads);
  }
  if (d) result.guider_grads = GuiderGrads::zeros_like(*d);
  result.loss = result.mse + lambda * result.adversarial;
  return result;
}

GuiderLoss guider_loss(const PredictorModel& p, const GuiderModel& d, std::span<const TrainSample* const> batch,
                       int threads) {
  require_batch(batch);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  std::vector<GuiderSample> per(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const TrainSample& s = *batch[i];
    const double predicted = predict_score(p, *s.dist_image).score;
    GuiderFeatures feats(d, *s.dist_image, *s.ref_image);
    GuiderSample& out = per[i];
    out.grads = GuiderGrads::zeros_like(d);

    FeatureVec dist_grad(feats.dist_features().size(), 0.0);
    FeatureVec ref_grad(dist_grad.size(), 0.0);
    auto term = [&](double score, double target) {
      const nn::Trace head = nn::forward(d.disc_head, feats.disc_input(score));
      const double prob = head.output().data[0];
      out.loss += bce(prob, target);
      if ((prob >= 0.5) == (target == 1.0)) ++out.correct;
      const DiscGradient g = disc_backward(d, head, bce_grad(prob, target) * inv_b, &out.grads.disc_head);
      for (std::size_t k = 0; k < dist_grad.size(); ++k) {
        dist_grad[k] += g.dist_features[k];
        ref_grad[k] += g.ref_features[k];
      }
    };
    term(s.mos, 1.0);
    term(predicted, 0.0);
    feats.backward(dist_grad, ref_grad, out.grads.encoder);
  });

  GuiderLoss result;
  result.grads = GuiderGrads::zeros_like(d);
  result.predictor_grads = PredictorGrads::zeros_like(p);
  int correct = 0;
  for (const GuiderSample& s : per) {
    result.loss += s.loss * inv_b;
    correct += s.correct;
    result.grads.add(s.grads);
  }
  result.accuracy = static_cast<double>(correct) / (2.0 * static_cast<double>(batch.size()));
  return result;
}

LossGradCheck check_loss_gradients(std::uint64_t seed, double lambda, double h) {
  ModelConfig cfg;
  cfg.patch_size = 8;
  cfg.encoder.feature_dim = 4;
  cfg.encoder.conv_channels = {3};
  Rng rng(seed);
  PredictorModel p = PredictorModel::create(cfg, 16, 8, rng);
  GuiderModel d = GuiderModel::create(cfg, rng);
  // Keep the head biases away from zero so the sigmoid/softplus outputs are
  // not degenerate at initialization.
  for (double* v : parameter_pointers(p)) *v += rng.uniform(-0.05, 0.05);
  for (double* v : parameter_pointers(d)) *v += rng.uniform(-0.05, 0.05);

  std::vector<TrainSample> samples;
  for (int i = 0; i < 2; ++i) {
    auto make = [&] {
      auto img = std::make_shared<ImageBuffer>(16, 8, 3);
      for (float& v : img->data()) v = static_cast<float>(rng.uniform());
      return img;
    };
    TrainSample s;
    s.ref_image = make();
    s.dist_image = make();
    s.mos = rng.uniform(0.0, 100.0);
    s.scene_id = "s" + std::to_string(i);
    samples.push_back(std::move(s));
  }
  std::vector<const TrainSample*> batch{&samples[0], &samples[1]};

  LossGradCheck out;
  {
    const PredictorLoss analytic = predictor_loss(p, &d, batch, lambda);
    out.predictor = nn::check_gradients(parameter_pointers(p), analytic.grads.flatten(),
                                        [&] { return predictor_loss(p, &d, batch, lambda).loss; }, h);
  }
  {
    const GuiderLoss analytic = guider_loss(p, d, batch);
    out.guider = nn::check_gradients(parameter_pointers(d), analytic.grads.flatten(),
                                     [&] { return guider_loss(p, d, batch).loss; }, h);
  }
  return out;
}

std::string TrainHistory::to_json_lines() const {
  std::string out;
  for (const EpochRecord& r : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["loss_p"] = r.loss_p;
    j["train_mse"] = r.train_mse;
    if (r.loss_d) j["loss_d"] = *r.loss_d;
    if (r.disc_accuracy) j["disc_accuracy"] = *r.disc_accuracy;
    if (r.validation) {
      j["val_plcc"] = r.validation->plcc;
      j["val_srocc"] = r.validation->srocc;
      j["val_rmse"] = r.validation->rmse;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

struct PredictorOptim {
  nn::AdamState encoder, weight_head, quality_head;

  explicit PredictorOptim(const PredictorModel& m)
      : encoder(nn::AdamState::for_network(m.encoder)),
        weight_head(nn::AdamState::for_network(m.weight_head)),
        quality_head(nn::AdamState::for_network(m.quality_head)) {}

  void step(PredictorModel& m, const PredictorGrads& g, double lr) {
    nn::adam_step(m.encoder, g.encoder, encoder, lr);
    nn::adam_step(m.weight_head, g.weight_head, weight_head, lr);
    nn::adam_step(m.quality_head, g.quality_head, quality_head, lr);
  }
};

struct GuiderOptim {
  nn::AdamState encoder, disc_head;

  explicit GuiderOptim(const GuiderModel& m)
      : encoder(nn::AdamState::for_network(m.encoder)), disc_head(nn::AdamState::for_network(m.disc_head)) {}

  void step(GuiderModel& m, const GuiderGrads& g, double lr) {
    nn::adam_step(m.encoder, g.encoder, encoder, lr);
    nn::adam_step(m.disc_head, g.disc_head, disc_head, lr);
  }
};

constexpr std::uint64_t kGuiderStream = 0x9E3779B97F4A7C15ULL;

void require_finite(double v, const char* what, int epoch) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string(what) + " became non-finite in epoch " + std::to_string(epoch));
  }
}

}  // namespace

TrainResult train(const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                  const std::vector<TrainSample>* validation, const EpochCallback& on_epoch) {
  if (dataset.empty()) throw InputError("train: empty dataset");
  if (cfg.batch_size < 1) throw InputError("train: batch_size must be positive");
  if (cfg.epochs < 0) throw InputError("train: epochs must be non-negative");
  if (cfg.lr <= 0.0) throw InputError("train: lr must be positive");
  if (cfg.lambda < 0.0) throw InputError("train: lambda must be non-negative");
  if (cfg.d_steps_per_p_step < 1) throw InputError("train: d_steps_per_p_step must be positive");

  const ImageBuffer& first = *dataset.front().dist_image;
  for (const auto& s : dataset) {
    if (!s.dist_image || !s.ref_image || !s.dist_image->same_shape(first) || !s.ref_image->same_shape(first)) {
      throw ShapeError("train: every sample needs distorted and reference images of one common shape");
    }
  }
  Rng rng(cfg.seed);
  TrainResult result{PredictorModel::create(cfg.model, first.width(), first.height(), rng), std::nullopt, {}};

  double mean = 0.0;
  for (const auto& s : dataset) mean += s.mos;
  mean /= static_cast<double>(dataset.size());
  double var = 0.0;
  for (const auto& s : dataset) var += (s.mos - mean) * (s.mos - mean);
  var /= static_cast<double>(dataset.size());
  result.predictor.score_offset = mean;
  result.predictor.score_scale = std::max(std::sqrt(var), 1.0);

  const bool adversarial = cfg.adversarial;
  const double lambda = adversarial ? cfg.lambda : 0.0;
  if (adversarial) {
    Rng guider_rng(cfg.seed ^ kGuiderStream);
    result.guider = GuiderModel::create(cfg.model, guider_rng);
  }

  PredictorOptim p_opt(result.predictor);
  std::optional<GuiderOptim> d_opt;
  if (adversarial) d_opt.emplace(*result.guider);

  std::vector<const TrainSample*> order;
  order.reserve(dataset.size());
  for (const auto& s : dataset) order.push_back(&s);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<const TrainSample*>(order));
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_d = 0.0, acc = 0.0;
    std::size_t d_updates = 0;
    const double n = static_cast<double>(order.size());

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      std::span<const TrainSample* const> batch(order.data() + start, len);

      if (adversarial) {
        for (int k = 0; k < cfg.d_steps_per_p_step; ++k) {
          GuiderLoss gl = guider_loss(result.predictor, *result.guider, batch, cfg.threads);
          require_finite(gl.loss, "guider loss", epoch);
          d_opt->step(*result.guider, gl.grads, cfg.lr);
          loss_d += gl.loss;
          acc += gl.accuracy;
          ++d_updates;
        }
      }

      PredictorLoss pl = predictor_loss(result.predictor, adversarial ? &*result.guider : nullptr, batch, lambda,
                                        cfg.threads);
      require_finite(pl.loss, "predictor loss", epoch);
      p_opt.step(result.predictor, pl.grads, cfg.lr);
      rec.loss_p += pl.loss * static_cast<double>(len) / n;
      rec.train_mse += pl.mse * static_cast<double>(len) / n;
    }

    if (adversarial && d_updates > 0) {
      rec.loss_d = loss_d / static_cast<double>(d_updates);
      rec.disc_accuracy = acc / static_cast<double>(d_updates);
    }
    if (validation && !validation->empty()) rec.validation = evaluate(result.predictor, *validation, cfg.threads);
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

std::vector<Fold> kfold_split(const std::vector<TrainSample>& samples, int k, std::uint64_t seed) {
  if (k < 2) throw InputError("kfold_split: k must be at least 2");
  std::set<std::string> unique;
  for (const auto& s : samples) unique.insert(s.scene_id);
  std::vector<std::string> scenes(unique.begin(), unique.end());
  if (scenes.size() < static_cast<std::size_t>(k)) {
    throw InputError("kfold_split: " + std::to_string(scenes.size()) + " scenes cannot fill " + std::to_string(k) +
                     " folds");
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(scenes));

  std::map<std::string, int> fold_of;
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  for (std::size_t j = 0; j < scenes.size(); ++j) {
    const int f = static_cast<int>(j % static_cast<std::size_t>(k));
    fold_of[scenes[j]] = f;
    folds[f].test_scenes.push_back(scenes[j]);
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int f = fold_of.at(samples[i].scene_id);
    for (int g = 0; g < k; ++g) (g == f ? folds[g].test : folds[g].train).push_back(i);
  }
  return folds;
}

CrossValidation cross_validate(const std::vector<TrainSample>& samples, int k, std::uint64_t split_seed,
                               const TrainConfig& cfg, AggregateMode mode,
                               const std::function<void(int fold, const EpochRecord&)>& on_epoch) {
  const auto folds = kfold_split(samples, k, split_seed);
  CrossValidation cv;
  std::vector<std::vector<double>> truth;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<TrainSample> train_set, test_set;
    for (std::size_t i : folds[f].train) train_set.push_back(samples[i]);
    for (std::size_t i : folds[f].test) test_set.push_back(samples[i]);

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + f;
    EpochCallback cb;
    if (on_epoch) cb = [&, f](const EpochRecord& r) { on_epoch(static_cast<int>(f), r); };
    TrainResult trained = train(train_set, fold_cfg, nullptr, cb);

    std::vector<double> t;
    for (const auto& s : test_set) t.push_back(s.mos);
    cv.fold_predictions.push_back(
        predict_all([&](const TrainSample& s) { return predict_score(trained.predictor, *s.dist_image).score; },
                    test_set, cfg.threads));
    truth.push_back(std::move(t));
    cv.histories.push_back(std::move(trained.history));
  }
  cv.report = make_report(cv.fold_predictions, truth, mode);
  return cv;
}

}  // namespace viqa
