#include "viqa/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace viqa {

using nn::Layer;
using nn::LayerKind;
using nn::Network;
using nn::Tensor;

namespace {

Network build_head(int input_dim, const std::vector<int>& widths, LayerKind output_activation, bool has_activation) {
  std::vector<Layer> layers;
  int in = input_dim;
  for (int w : widths) {
    layers.push_back(Layer::dense(in, w));
    layers.push_back(Layer::activation(LayerKind::relu));
    in = w;
  }
  layers.push_back(Layer::dense(in, 1));
  if (has_activation) layers.push_back(Layer::activation(output_activation));
  return Network(std::move(layers));
}

void require_config(const ModelConfig& cfg) {
  if (cfg.patch_size < 1 || cfg.channels < 1 || cfg.encoder.feature_dim < 1 || cfg.encoder.conv_channels.empty() ||
      cfg.encoder.input_filter_radius < 0) {
    throw InputError("model config: patch size, channels, feature_dim and conv stack must be positive/non-empty");
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InputError("model metadata: bad " + what);
  return v;
}

int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InputError("model metadata: bad " + what);
  return v;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> split_ints(const std::string& s, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_int(item, what));
  return out;
}

FeatureVec tensor_values(const Tensor& t) { return t.data; }

}  // namespace

std::vector<int> default_head_widths(int feature_dim) {
  if (feature_dim == 2048) return {512, 64, 8};
  return {std::max(4, feature_dim / 2), std::max(4, feature_dim / 4), 8};
}

std::vector<int> ModelConfig::resolved_head_widths() const {
  return head_widths.empty() ? default_head_widths(encoder.feature_dim) : head_widths;
}

Network build_encoder(const ModelConfig& cfg) {
  require_config(cfg);
  std::vector<Layer> layers;
  if (cfg.encoder.input_filter_radius > 0) layers.push_back(Layer::local_mean_sub(cfg.encoder.input_filter_radius));
  int in = cfg.channels;
  for (int out : cfg.encoder.conv_channels) {
    layers.push_back(Layer::conv2d(in, out, cfg.encoder.kernel, cfg.encoder.stride));
    layers.push_back(Layer::activation(LayerKind::relu));
    in = out;
  }
  layers.push_back(Layer::activation(LayerKind::global_avg_pool));
  layers.push_back(Layer::dense(in, cfg.encoder.feature_dim));
  Network net(std::move(layers));
  net.output_shape({cfg.channels, cfg.patch_size, cfg.patch_size});  // throws if the stack does not fit
  return net;
}

Network build_weight_head(const ModelConfig& cfg) {
  return build_head(cfg.encoder.feature_dim + 2, cfg.resolved_head_widths(), LayerKind::softplus, true);
}

Network build_quality_head(const ModelConfig& cfg) {
  return build_head(cfg.encoder.feature_dim, cfg.resolved_head_widths(), LayerKind::relu, false);
}

Network build_disc_head(const ModelConfig& cfg) {
  return build_head(3 * cfg.encoder.feature_dim + 1, cfg.resolved_head_widths(), LayerKind::sigmoid, true);
}

PredictorModel PredictorModel::create(const ModelConfig& cfg, int image_width, int image_height, Rng& rng) {
  if (image_width <= 0 || image_height <= 0) throw InputError("image dimensions must be positive");
  PredictorModel m;
  m.config = cfg;
  m.encoder = build_encoder(cfg);
  m.weight_head = build_weight_head(cfg);
  m.quality_head = build_quality_head(cfg);
  nn::init_parameters(m.encoder, rng);
  nn::init_parameters(m.weight_head, rng);
  nn::init_parameters(m.quality_head, rng);
  m.position_scale_x = image_width / 2.0;
  m.position_scale_y = image_height / 2.0;
  return m;
}

GuiderModel GuiderModel::create(const ModelConfig& cfg, Rng& rng) {
  GuiderModel g;
  g.config = cfg;
  g.encoder = build_encoder(cfg);
  g.disc_head = build_disc_head(cfg);
  nn::init_parameters(g.encoder, rng);
  nn::init_parameters(g.disc_head, rng);
  return g;
}

double pool_scores(const std::vector<double>& weights, const std::vector<double>& qualities) {
  if (weights.size() != qualities.size() || weights.empty()) {
    throw ShapeError("pool_scores: need matching non-empty weight and quality lists");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    num += weights[i] * qualities[i];
    den += weights[i];
  }
  if (!(den > 0.0)) throw NumericError("pool_scores: weights must sum to a positive value");
  const auto [lo, hi] = std::minmax_element(qualities.begin(), qualities.end());
  return std::clamp(num / den, *lo, *hi);
}

Tensor patch_tensor(const Patch& patch) {
  const ImageBuffer& px = patch.pixels;
  Tensor t({px.channels(), px.height(), px.width()});
  std::transform(px.data().begin(), px.data().end(), t.data.begin(),
                 [](float v) { return static_cast<double>(v) - kPixelCenter; });
  return t;
}

FeatureVec encode_patch(const Network& encoder, const Patch& patch) {
  return tensor_values(nn::forward(encoder, patch_tensor(patch)).output());
}

PredictorPass::PredictorPass(const PredictorModel& model, const ImageBuffer& img)
    : model_(model), patches_(extract_patch_grid(img, model.config.patch_size)) {
  if (img.channels() != model.config.channels) {
    throw ShapeError("model expects " + std::to_string(model.config.channels) + "-channel images");
  }
  const int d = model.config.encoder.feature_dim;
  traces_.reserve(patches_.patches.size());
  breakdown_.weights.reserve(patches_.patches.size());
  breakdown_.qualities.reserve(patches_.patches.size());
  for (const Patch& patch : patches_.patches) {
    PatchTrace t;
    t.encoder = nn::forward(model.encoder, patch_tensor(patch));
    const Tensor& sf = t.encoder.output();
    Tensor cf({d + 2});
    std::copy(sf.data.begin(), sf.data.end(), cf.data.begin());
    cf.data[d] = patch.position_x / model.position_scale_x;
    cf.data[d + 1] = patch.position_y / model.position_scale_y;
    t.weight_head = nn::forward(model.weight_head, std::move(cf));
    t.quality_head = nn::forward(model.quality_head, sf);
    breakdown_.weights.push_back(t.weight_head.output().data[0] + kWeightFloor);
    breakdown_.qualities.push_back(model.score_offset + model.score_scale * t.quality_head.output().data[0]);
    traces_.push_back(std::move(t));
  }
  breakdown_.score = pool_scores(breakdown_.weights, breakdown_.qualities);
}

void PredictorPass::backward(double score_grad, PredictorGrads& accum) const {
  const int d = model_.config.encoder.feature_dim;
  double weight_sum = 0.0;
  for (double w : breakdown_.weights) weight_sum += w;
  for (std::size_t i = 0; i < traces_.size(); ++i) {
    const PatchTrace& t = traces_[i];
    const double dq = score_grad * breakdown_.weights[i] / weight_sum;
    const double dw = score_grad * (breakdown_.qualities[i] - breakdown_.score) / weight_sum;
    Tensor sf_grad =
        nn::backward_into(model_.quality_head, t.quality_head, Tensor({1}, {dq * model_.score_scale}), &accum.quality_head);
    const Tensor cf_grad = nn::backward_into(model_.weight_head, t.weight_head, Tensor({1}, {dw}), &accum.weight_head);
    for (int k = 0; k < d; ++k) sf_grad.data[k] += cf_grad.data[k];
    nn::backward_into(model_.encoder, t.encoder, sf_grad, &accum.encoder, false);
  }
}

std::vector<double> PredictorPass::guided_pixel_saliency() const {
  const int d = model_.config.encoder.feature_dim;
  const int p = patches_.patch_size;
  std::vector<double> out(static_cast<std::size_t>(patches_.source_width) * patches_.source_height, 0.0);
  double weight_sum = 0.0;
  for (double w : breakdown_.weights) weight_sum += w;
  for (std::size_t i = 0; i < traces_.size(); ++i) {
    const PatchTrace& t = traces_[i];
    const double dq = breakdown_.weights[i] / weight_sum;
    const double dw = (breakdown_.qualities[i] - breakdown_.score) / weight_sum;
    Tensor sf_grad = nn::guided_backward(model_.quality_head, t.quality_head, Tensor({1}, {dq * model_.score_scale}));
    const Tensor cf_grad = nn::guided_backward(model_.weight_head, t.weight_head, Tensor({1}, {dw}));
    for (int k = 0; k < d; ++k) sf_grad.data[k] += cf_grad.data[k];
    const Tensor pixel_grad = nn::guided_backward(model_.encoder, t.encoder, sf_grad);
    const GridIndex g = patches_.patches[i].grid_index;
    const int channels = pixel_grad.shape[0];
    for (int c = 0; c < channels; ++c) {
      for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
          const double v = pixel_grad.data[(static_cast<std::size_t>(c) * p + y) * p + x];
          out[static_cast<std::size_t>(g.row * p + y) * patches_.source_width + g.col * p + x] += std::abs(v);
        }
      }
    }
  }
  return out;
}

ScoreBreakdown predict_score(const PredictorModel& model, const ImageBuffer& img) {
  return PredictorPass(model, img).breakdown();
}

ImageBuffer saliency_map(const PredictorModel& model, const ImageBuffer& img) {
  const PredictorPass pass(model, img);
  const std::vector<double> raw = pass.guided_pixel_saliency();
  const double peak = raw.empty() ? 0.0 : *std::max_element(raw.begin(), raw.end());
  ImageBuffer out(img.width(), img.height(), 1);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < raw.size(); ++i) out.data()[i] = static_cast<float>(raw[i] / peak);
  }
  return out;
}

GuiderFeatures::GuiderFeatures(const GuiderModel& guider, const ImageBuffer& dist, const ImageBuffer& ref)
    : guider_(guider) {
  if (!dist.same_shape(ref)) throw ShapeError("guider: distorted and reference images differ in shape");
  const int d = guider.config.encoder.feature_dim;
  auto encode_all = [&](const ImageBuffer& img, std::vector<nn::Trace>& traces, FeatureVec& mean) {
    const PatchSet set = extract_patch_grid(img, guider.config.patch_size);
    mean.assign(static_cast<std::size_t>(d), 0.0);
    for (const Patch& patch : set.patches) {
      traces.push_back(nn::forward(guider.encoder, patch_tensor(patch)));
      const auto& f = traces.back().output().data;
      for (int k = 0; k < d; ++k) mean[k] += f[k];
    }
    for (double& v : mean) v /= static_cast<double>(set.patches.size());
  };
  encode_all(dist, dist_traces_, dist_features_);
  encode_all(ref, ref_traces_, ref_features_);
}

Tensor GuiderFeatures::disc_input(double score) const {
  const std::size_t d = dist_features_.size();
  Tensor x({static_cast<int>(3 * d + 1)});
  for (std::size_t k = 0; k < d; ++k) {
    x.data[k] = dist_features_[k];
    x.data[d + k] = ref_features_[k];
    x.data[2 * d + k] = dist_features_[k] - ref_features_[k];
  }
  x.data[3 * d] = score / kScoreInputScale;
  return x;
}

void GuiderFeatures::backward(const FeatureVec& dist_grad, const FeatureVec& ref_grad,
                              nn::Gradients& encoder_accum) const {
  auto run = [&](const std::vector<nn::Trace>& traces, const FeatureVec& grad) {
    Tensor per_patch({static_cast<int>(grad.size())});
    for (std::size_t k = 0; k < grad.size(); ++k) per_patch.data[k] = grad[k] / static_cast<double>(traces.size());
    for (const nn::Trace& t : traces) nn::backward_into(guider_.encoder, t, per_patch, &encoder_accum, false);
  };
  run(dist_traces_, dist_grad);
  run(ref_traces_, ref_grad);
}

DiscGradient disc_backward(const GuiderModel& guider, const nn::Trace& head_trace, double prob_grad,
                           nn::Gradients* head_accum) {
  const Tensor g = nn::backward_into(guider.disc_head, head_trace, Tensor({1}, {prob_grad}), head_accum);
  const std::size_t d = static_cast<std::size_t>(guider.config.encoder.feature_dim);
  DiscGradient out;
  out.dist_features.resize(d);
  out.ref_features.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    out.dist_features[k] = g.data[k] + g.data[2 * d + k];
    out.ref_features[k] = g.data[d + k] - g.data[2 * d + k];
  }
  out.score = g.data[3 * d] / kScoreInputScale;
  return out;
}

double discriminate(const GuiderModel& guider, double score, const ImageBuffer& dist, const ImageBuffer& ref) {
  if (!std::isfinite(score)) throw InputError("discriminate: score must be finite");
  const GuiderFeatures feats(guider, dist, ref);
  return nn::forward(guider.disc_head, feats.disc_input(score)).output().data[0];
}

PredictorGrads PredictorGrads::zeros_like(const PredictorModel& model) {
  return {nn::Gradients::zeros_like(model.encoder), nn::Gradients::zeros_like(model.weight_head),
          nn::Gradients::zeros_like(model.quality_head)};
}

void PredictorGrads::add(const PredictorGrads& other, double s) {
  encoder.add(other.encoder, s);
  weight_head.add(other.weight_head, s);
  quality_head.add(other.quality_head, s);
}

void PredictorGrads::scale(double factor) {
  encoder.scale(factor);
  weight_head.scale(factor);
  quality_head.scale(factor);
}

std::vector<double> PredictorGrads::flatten() const {
  std::vector<double> out = encoder.flatten();
  for (const auto* g : {&weight_head, &quality_head}) {
    const auto f = g->flatten();
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

bool PredictorGrads::all_zero() const { return encoder.all_zero() && weight_head.all_zero() && quality_head.all_zero(); }

GuiderGrads GuiderGrads::zeros_like(const GuiderModel& model) {
  return {nn::Gradients::zeros_like(model.encoder), nn::Gradients::zeros_like(model.disc_head)};
}

void GuiderGrads::add(const GuiderGrads& other, double s) {
  encoder.add(other.encoder, s);
  disc_head.add(other.disc_head, s);
}

void GuiderGrads::scale(double factor) {
  encoder.scale(factor);
  disc_head.scale(factor);
}

std::vector<double> GuiderGrads::flatten() const {
  std::vector<double> out = encoder.flatten();
  const auto f = disc_head.flatten();
  out.insert(out.end(), f.begin(), f.end());
  return out;
}

bool GuiderGrads::all_zero() const { return encoder.all_zero() && disc_head.all_zero(); }

std::vector<double*> parameter_pointers(PredictorModel& model) {
  std::vector<double*> out = nn::parameter_pointers(model.encoder);
  for (Network* n : {&model.weight_head, &model.quality_head}) {
    const auto p = nn::parameter_pointers(*n);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<double*> parameter_pointers(GuiderModel& model) {
  std::vector<double*> out = nn::parameter_pointers(model.encoder);
  const auto p = nn::parameter_pointers(model.disc_head);
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

void save_model(const VriqaModel& model, const std::filesystem::path& path) {
  const PredictorModel& p = model.predictor;
  const ModelConfig& cfg = p.config;
  nn::Container c;
  c.metadata = {
      {"format_version", std::to_string(kModelFormatVersion)},
      {"patch_size", std::to_string(cfg.patch_size)},
      {"channels", std::to_string(cfg.channels)},
      {"feature_dim", std::to_string(cfg.encoder.feature_dim)},
      {"input_filter_radius", std::to_string(cfg.encoder.input_filter_radius)},
      {"conv_channels", join_ints(cfg.encoder.conv_channels)},
      {"kernel", std::to_string(cfg.encoder.kernel)},
      {"stride", std::to_string(cfg.encoder.stride)},
      {"head_widths", join_ints(cfg.resolved_head_widths())},
      {"position_scale", format_double(p.position_scale_x) + "," + format_double(p.position_scale_y)},
      {"score_offset", format_double(p.score_offset)},
      {"score_scale", format_double(p.score_scale)},
  };
  c.networks = {{"predictor.encoder", p.encoder},
                {"predictor.weight_head", p.weight_head},
                {"predictor.quality_head", p.quality_head}};
  if (model.guider) {
    c.networks.emplace_back("guider.encoder", model.guider->encoder);
    c.networks.emplace_back("guider.disc_head", model.guider->disc_head);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError(ImageIoErrc::io_failure, "cannot write model file " + path.string());
  nn::write_container(out, c);
  if (!out) throw ImageIoError(ImageIoErrc::io_failure, "failed writing model file " + path.string());
}

VriqaModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError(ImageIoErrc::missing_file, "cannot open model file " + path.string());
  const nn::Container c = nn::read_container(in);
  auto meta = [&](const std::string& key) -> const std::string& {
    const std::string* v = c.find_meta(key);
    if (!v) throw InputError("model file lacks metadata '" + key + "'");
    return *v;
  };
  if (parse_int(meta("format_version"), "format_version") != kModelFormatVersion) {
    throw InputError("unsupported model format version");
  }
  VriqaModel m;
  PredictorModel& p = m.predictor;
  ModelConfig& cfg = p.config;
  cfg.patch_size = parse_int(meta("patch_size"), "patch_size");
  cfg.channels = parse_int(meta("channels"), "channels");
  cfg.encoder.feature_dim = parse_int(meta("feature_dim"), "feature_dim");
  cfg.encoder.input_filter_radius = parse_int(meta("input_filter_radius"), "input_filter_radius");
  cfg.encoder.conv_channels = split_ints(meta("conv_channels"), "conv_channels");
  cfg.encoder.kernel = parse_int(meta("kernel"), "kernel");
  cfg.encoder.stride = parse_int(meta("stride"), "stride");
  cfg.head_widths = split_ints(meta("head_widths"), "head_widths");
  const std::string& scale = meta("position_scale");
  const auto comma = scale.find(',');
  if (comma == std::string::npos) throw InputError("model metadata: bad position_scale");
  p.position_scale_x = parse_double(scale.substr(0, comma), "position_scale");
  p.position_scale_y = parse_double(scale.substr(comma + 1), "position_scale");
  p.score_offset = parse_double(meta("score_offset"), "score_offset");
  p.score_scale = parse_double(meta("score_scale"), "score_scale");

  auto network = [&](const std::string& name, const Network& expected_layout) {
    const Network* n = c.find_network(name);
    if (!n) throw InputError("model file lacks network '" + name + "'");
    if (n->layers().size() != expected_layout.layers().size()) {
      throw InputError("network '" + name + "' does not match the model metadata");
    }
    for (std::size_t i = 0; i < n->layers().size(); ++i) {
      if (n->layers()[i].kind != expected_layout.layers()[i].kind ||
          n->layers()[i].hyper != expected_layout.layers()[i].hyper) {
        throw InputError("network '" + name + "' does not match the model metadata");
      }
    }
    return *n;
  };
  p.encoder = network("predictor.encoder", build_encoder(cfg));
  p.weight_head = network("predictor.weight_head", build_weight_head(cfg));
  p.quality_head = network("predictor.quality_head", build_quality_head(cfg));
  if (c.find_network("guider.encoder")) {
    GuiderModel g;
    g.config = cfg;
    g.encoder = network("guider.encoder", build_encoder(cfg));
    g.disc_head = network("guider.disc_head", build_disc_head(cfg));
    m.guider = std::move(g);
  }
  return m;
}

}  // namespace viqa
