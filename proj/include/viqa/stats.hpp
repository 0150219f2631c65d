#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "viqa/dataset.hpp"
#include "viqa/model.hpp"

namespace viqa {

// Pearson correlation. Throws NumericError when either series is constant.
double plcc(std::span<const double> x, std::span<const double> y);

// Mid-ranks (1-based); ties share the average of their positions.
std::vector<double> fractional_ranks(std::span<const double> x);

// Pearson correlation of fractional ranks.
double srocc(std::span<const double> x, std::span<const double> y);

double rmse(std::span<const double> x, std::span<const double> y);

struct EvalMetrics {
  double plcc = 0.0;
  double srocc = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
};

EvalMetrics compute_metrics(std::span<const double> predicted, std::span<const double> truth);

using ScorePredictor = std::function<double(const TrainSample&)>;

// Predicts every sample (in parallel when threads > 1) and scores the
// predictions against the stored MOS.
std::vector<double> predict_all(const ScorePredictor& predict, const std::vector<TrainSample>& samples, int threads = 1);
EvalMetrics evaluate(const ScorePredictor& predict, const std::vector<TrainSample>& samples, int threads = 1);
EvalMetrics evaluate(const PredictorModel& model, const std::vector<TrainSample>& samples, int threads = 1);

enum class AggregateMode { fold_mean, pooled };

struct EvalReport {
  std::vector<EvalMetrics> per_fold;
  EvalMetrics aggregate;
  AggregateMode mode = AggregateMode::fold_mean;

  // {"folds":[{plcc,srocc,rmse,n}],"aggregate":{...},"meta":{...}}
  std::string to_json() const;
};

// Mean of each measure across folds, or (pooled) the measures of the
// concatenated predictions.
EvalReport make_report(const std::vector<std::vector<double>>& fold_predictions,
                       const std::vector<std::vector<double>>& fold_truth, AggregateMode mode);

}  // namespace viqa
