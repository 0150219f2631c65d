#include "viqa/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "viqa/parallel.hpp"

namespace viqa {

namespace {

void require_pair(std::span<const double> x, std::span<const double> y, std::size_t min_len, const char* what) {
  if (x.size() != y.size()) throw ShapeError(std::string(what) + ": length mismatch");
  if (x.size() < min_len) {
    throw InputError(std::string(what) + ": need at least " + std::to_string(min_len) + " values");
  }
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

nlohmann::ordered_json metrics_json(const EvalMetrics& m) {
  nlohmann::ordered_json j;
  j["plcc"] = m.plcc;
  j["srocc"] = m.srocc;
  j["rmse"] = m.rmse;
  j["n"] = m.n;
  return j;
}

}  // namespace

double plcc(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, 2, "plcc");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("correlation undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> fractional_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    // positions i..j (0-based) share rank mean(i+1..j+1)
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double srocc(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, 2, "srocc");
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  return plcc(rx, ry);
}

double rmse(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, 1, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(x.size()));
}

EvalMetrics compute_metrics(std::span<const double> predicted, std::span<const double> truth) {
  return {plcc(predicted, truth), srocc(predicted, truth), rmse(predicted, truth), predicted.size()};
}

std::vector<double> predict_all(const ScorePredictor& predict, const std::vector<TrainSample>& samples, int threads) {
  std::vector<double> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) { out[i] = predict(samples[i]); });
  return out;
}

EvalMetrics evaluate(const ScorePredictor& predict, const std::vector<TrainSample>& samples, int threads) {
  if (samples.empty()) throw InputError("evaluate: no samples");
  const auto predicted = predict_all(predict, samples, threads);
  std::vector<double> truth;
  truth.reserve(samples.size());
  for (const auto& s : samples) truth.push_back(s.mos);
  return compute_metrics(predicted, truth);
}

EvalMetrics evaluate(const PredictorModel& model, const std::vector<TrainSample>& samples, int threads) {
  return evaluate([&](const TrainSample& s) { return predict_score(model, *s.dist_image).score; }, samples, threads);
}

EvalReport make_report(const std::vector<std::vector<double>>& fold_predictions,
                       const std::vector<std::vector<double>>& fold_truth, AggregateMode mode) {
  if (fold_predictions.empty() || fold_predictions.size() != fold_truth.size()) {
    throw InputError("make_report: need matching non-empty fold lists");
  }
  EvalReport report;
  report.mode = mode;
  std::vector<double> all_pred, all_truth;
  for (std::size_t f = 0; f < fold_predictions.size(); ++f) {
    report.per_fold.push_back(compute_metrics(fold_predictions[f], fold_truth[f]));
    all_pred.insert(all_pred.end(), fold_predictions[f].begin(), fold_predictions[f].end());
    all_truth.insert(all_truth.end(), fold_truth[f].begin(), fold_truth[f].end());
  }
  if (mode == AggregateMode::pooled) {
    report.aggregate = compute_metrics(all_pred, all_truth);
  } else {
    const double k = static_cast<double>(report.per_fold.size());
    for (const auto& m : report.per_fold) {
      report.aggregate.plcc += m.plcc / k;
      report.aggregate.srocc += m.srocc / k;
      report.aggregate.rmse += m.rmse / k;
      report.aggregate.n += m.n;
    }
  }
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["folds"] = nlohmann::ordered_json::array();
  for (const auto& m : per_fold) j["folds"].push_back(metrics_json(m));
  j["aggregate"] = metrics_json(aggregate);
  j["meta"]["aggregate_mode"] = mode == AggregateMode::pooled ? "pooled" : "fold_mean";
  j["meta"]["plcc_nonlinear_fit"] = false;
  return j.dump();
}

}  // namespace viqa
