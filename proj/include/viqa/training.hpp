#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viqa/dataset.hpp"
#include "viqa/model.hpp"
#include "viqa/stats.hpp"

namespace viqa {

struct TrainConfig {
  int batch_size = 6;
  double lr = 2e-4;
  double lambda = 100.0;
  int epochs = 25;
  std::uint64_t seed = 1;
  int d_steps_per_p_step = 1;
  // false: predictor only ("without critic"), lambda treated as 0.
  bool adversarial = true;
  int threads = 1;
  ModelConfig model;
};

// Binary cross-entropy J(p, q) with p clamped to [1e-7, 1 - 1e-7].
double bce(double p, double target);
// dJ/dp; zero where the clamp is active.
double bce_grad(double p, double target);

inline constexpr double kProbClamp = 1e-7;

struct PredictorLoss {
  double loss = 0.0;      // batch mean of (s_hat - s)^2 + lambda * J(D(s_hat), 1)
  double mse = 0.0;       // batch mean of (s_hat - s)^2
  double adversarial = 0.0;
  PredictorGrads grads;
  // Zero-filled when a guider is supplied: L_P never updates D.
  std::optional<GuiderGrads> guider_grads;
  std::vector<double> predictions;
};

struct GuiderLoss {
  double loss = 0.0;      // batch mean of J(D(s), 1) + J(D(s_hat), 0)
  double accuracy = 0.0;  // fraction of the 2B decisions on the correct side of 0.5
  GuiderGrads grads;
  PredictorGrads predictor_grads;  // zero-filled: L_D never updates P
};

// Gradients flow through the discriminator into the predictor's score;
// guider parameters receive none. guider may be null when lambda is 0.
PredictorLoss predictor_loss(const PredictorModel& p, const GuiderModel* d, std::span<const TrainSample* const> batch,
                             double lambda, int threads = 1);

// The predictor is held fixed; its score is recomputed from the current p.
GuiderLoss guider_loss(const PredictorModel& p, const GuiderModel& d, std::span<const TrainSample* const> batch,
                       int threads = 1);

struct LossGradCheck {
  nn::GradCheckResult predictor;  // L_P against every predictor parameter
  nn::GradCheckResult guider;     // L_D against every guider parameter
};

// Finite-difference check of both losses on a tiny random configuration
// (D = 4, P = 8, two-patch 16x8 images, batch of two).
LossGradCheck check_loss_gradients(std::uint64_t seed, double lambda = 100.0, double h = 1e-4);

struct EpochRecord {
  int epoch = 0;
  double loss_p = 0.0;
  double train_mse = 0.0;
  std::optional<double> loss_d;
  std::optional<double> disc_accuracy;
  std::optional<EvalMetrics> validation;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  // One JSON object per line; critic-free runs carry no loss_d field.
  std::string to_json_lines() const;
};

struct TrainResult {
  PredictorModel predictor;
  std::optional<GuiderModel> guider;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Alternating minimax training. Throws NumericError on a non-finite loss.
TrainResult train(const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                  const std::vector<TrainSample>* validation = nullptr, const EpochCallback& on_epoch = {});

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::string> test_scenes;
};

// Partitions scene ids (never individual samples) into k folds whose sizes
// differ by at most one scene.
std::vector<Fold> kfold_split(const std::vector<TrainSample>& samples, int k, std::uint64_t seed);

struct CrossValidation {
  EvalReport report;
  std::vector<TrainHistory> histories;
  std::vector<std::vector<double>> fold_predictions;
};

// Trains one model per fold (seed cfg.seed + fold) and evaluates it on the
// held-out scenes.
CrossValidation cross_validate(const std::vector<TrainSample>& samples, int k, std::uint64_t split_seed,
                               const TrainConfig& cfg, AggregateMode mode = AggregateMode::fold_mean,
                               const std::function<void(int fold, const EpochRecord&)>& on_epoch = {});

}  // namespace viqa
