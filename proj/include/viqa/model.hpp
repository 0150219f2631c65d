#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "viqa/image.hpp"
#include "viqa/nn.hpp"
#include "viqa/random.hpp"

namespace viqa {

using FeatureVec = std::vector<double>;

struct EncoderConfig {
  int feature_dim = 64;
  // Radius of the local mean subtraction applied to the patch before the
  // first convolution; 0 feeds raw (centered) pixels.
  int input_filter_radius = 2;
  // One stride-2 3x3 valid conv + relu per entry, then global average
  // pooling and a dense projection to feature_dim.
  std::vector<int> conv_channels{4, 8, 16};
  int kernel = 3;
  int stride = 2;
};

struct ModelConfig {
  int patch_size = 64;
  int channels = 3;
  EncoderConfig encoder;
  // Hidden widths of the three-hidden-layer heads; empty selects
  // default_head_widths(feature_dim).
  std::vector<int> head_widths;

  std::vector<int> resolved_head_widths() const;
};

// 512/64/8 at feature_dim 2048, otherwise D/2, D/4, 8 (each at least 4).
std::vector<int> default_head_widths(int feature_dim);

nn::Network build_encoder(const ModelConfig& cfg);
// cf (D+2) -> 1, softplus output.
nn::Network build_weight_head(const ModelConfig& cfg);
// sf (D) -> 1, linear output.
nn::Network build_quality_head(const ModelConfig& cfg);
// [sf_d, sf_r, sf_d - sf_r, s/100] (3D+1) -> 1, sigmoid output.
nn::Network build_disc_head(const ModelConfig& cfg);

// Floor added to the softplus output so pooling weights stay positive.
inline constexpr double kWeightFloor = 1e-6;
// Scores enter the discriminator divided by this.
inline constexpr double kScoreInputScale = 100.0;

struct PredictorModel {
  ModelConfig config;
  nn::Network encoder;
  nn::Network weight_head;
  nn::Network quality_head;
  // Image half-dimensions; patch offsets are divided by these.
  double position_scale_x = 1.0;
  double position_scale_y = 1.0;
  // q_i = score_offset + score_scale * quality_head(sf_i)
  double score_offset = 50.0;
  double score_scale = 50.0;

  static PredictorModel create(const ModelConfig& cfg, int image_width, int image_height, Rng& rng);
};

struct GuiderModel {
  ModelConfig config;
  nn::Network encoder;
  nn::Network disc_head;

  static GuiderModel create(const ModelConfig& cfg, Rng& rng);
};

struct ScoreBreakdown {
  std::vector<double> weights;
  std::vector<double> qualities;
  double score = 0.0;
};

// sum(w_i q_i) / sum(w_i)
double pool_scores(const std::vector<double>& weights, const std::vector<double>& qualities);

// Pixels enter the encoder shifted by this value.
inline constexpr double kPixelCenter = 0.5;

nn::Tensor patch_tensor(const Patch& patch);
FeatureVec encode_patch(const nn::Network& encoder, const Patch& patch);

ScoreBreakdown predict_score(const PredictorModel& model, const ImageBuffer& img);

// Probability that s is a human score for the (distorted, reference) pair.
double discriminate(const GuiderModel& guider, double score, const ImageBuffer& dist, const ImageBuffer& ref);

// |guided gradient of the predicted score| per pixel, summed over channels
// and max-normalized to [0,1].
ImageBuffer saliency_map(const PredictorModel& model, const ImageBuffer& img);

struct PredictorGrads {
  nn::Gradients encoder;
  nn::Gradients weight_head;
  nn::Gradients quality_head;

  static PredictorGrads zeros_like(const PredictorModel& model);
  void add(const PredictorGrads& other, double scale = 1.0);
  void scale(double factor);
  std::vector<double> flatten() const;
  bool all_zero() const;
};

struct GuiderGrads {
  nn::Gradients encoder;
  nn::Gradients disc_head;

  static GuiderGrads zeros_like(const GuiderModel& model);
  void add(const GuiderGrads& other, double scale = 1.0);
  void scale(double factor);
  std::vector<double> flatten() const;
  bool all_zero() const;
};

// Parameters in the same order as PredictorGrads::flatten.
std::vector<double*> parameter_pointers(PredictorModel& model);
std::vector<double*> parameter_pointers(GuiderModel& model);

// Predictor forward pass that keeps every patch trace for backprop.
class PredictorPass {
 public:
  PredictorPass(const PredictorModel& model, const ImageBuffer& img);

  double score() const { return breakdown_.score; }
  const ScoreBreakdown& breakdown() const { return breakdown_; }

  // Accumulates d(loss)/d(params) given d(loss)/d(score).
  void backward(double score_grad, PredictorGrads& accum) const;

  // |guided-backprop gradient of the score| per pixel, summed over
  // channels, row-major over the full image. Not normalized.
  std::vector<double> guided_pixel_saliency() const;

 private:
  struct PatchTrace {
    nn::Trace encoder;
    nn::Trace weight_head;
    nn::Trace quality_head;
  };

  const PredictorModel& model_;
  PatchSet patches_;
  std::vector<PatchTrace> traces_;
  ScoreBreakdown breakdown_;
};

// Guider encoder pass over both images: features are patch means.
class GuiderFeatures {
 public:
  GuiderFeatures(const GuiderModel& guider, const ImageBuffer& dist, const ImageBuffer& ref);

  const FeatureVec& dist_features() const { return dist_features_; }
  const FeatureVec& ref_features() const { return ref_features_; }

  nn::Tensor disc_input(double score) const;

  // Accumulates encoder gradients given d(loss)/d(mean features).
  void backward(const FeatureVec& dist_grad, const FeatureVec& ref_grad, nn::Gradients& encoder_accum) const;

 private:
  const GuiderModel& guider_;
  std::vector<nn::Trace> dist_traces_;
  std::vector<nn::Trace> ref_traces_;
  FeatureVec dist_features_;
  FeatureVec ref_features_;
};

struct DiscGradient {
  FeatureVec dist_features;
  FeatureVec ref_features;
  double score = 0.0;
};

// Backprop of d(loss)/d(probability) through the discriminator head. Head
// parameter gradients are accumulated when head_accum is non-null.
DiscGradient disc_backward(const GuiderModel& guider, const nn::Trace& head_trace, double prob_grad,
                           nn::Gradients* head_accum);

struct VriqaModel {
  PredictorModel predictor;
  std::optional<GuiderModel> guider;
};

inline constexpr int kModelFormatVersion = 1;

void save_model(const VriqaModel& model, const std::filesystem::path& path);
VriqaModel load_model(const std::filesystem::path& path);

}  // namespace viqa
