#include "viqa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

namespace viqa::nn {

namespace {

thread_local ReluProbe* g_active_probe = nullptr;

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream s;
  s << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? "," : "") << shape[i];
  s << "]";
  return s.str();
}

// Both outputs are kept strictly inside their open ranges even where the
// exact value rounds to a bound.
double sigmoid(double x) {
  double y;
  if (x >= 0) {
    y = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    y = e / (1.0 + e);
  }
  return std::clamp(y, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

double softplus(double x) {
  const double y = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return std::max(y, std::numeric_limits<double>::min());
}

std::vector<int> layer_output_shape(const Layer& layer, const std::vector<int>& in) {
  switch (layer.kind) {
    case LayerKind::dense:
      if (static_cast<int>(shape_size(in)) != layer.hyper[0]) {
        throw ShapeError("dense layer expects " + std::to_string(layer.hyper[0]) + " inputs, got " + shape_string(in));
      }
      return {layer.hyper[1]};
    case LayerKind::conv2d: {
      const int k = layer.hyper[2];
      const int s = layer.hyper[3];
      if (in.size() != 3 || in[0] != layer.hyper[0] || in[1] < k || in[2] < k) {
        throw ShapeError("conv2d expects [" + std::to_string(layer.hyper[0]) + ",H>=" + std::to_string(k) +
                         ",W>=" + std::to_string(k) + "], got " + shape_string(in));
      }
      return {layer.hyper[1], (in[1] - k) / s + 1, (in[2] - k) / s + 1};
    }
    case LayerKind::global_avg_pool:
      if (in.size() != 3) throw ShapeError("global_avg_pool expects [C,H,W], got " + shape_string(in));
      return {in[0]};
    case LayerKind::local_mean_sub:
      if (in.size() != 3) throw ShapeError("local_mean_sub expects [C,H,W], got " + shape_string(in));
      return in;
    case LayerKind::relu:
    case LayerKind::sigmoid:
    case LayerKind::softplus:
      return in;
  }
  throw ShapeError("unknown layer kind");
}

// Sums over the window [i-r, i+r]^2 clipped to an h x w plane.
void box_sum(const double* src, double* dst, int h, int w, int r) {
  thread_local std::vector<double> rows;
  rows.assign(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    const double* in = src + static_cast<std::size_t>(y) * w;
    double* out = rows.data() + static_cast<std::size_t>(y) * w;
    for (int d = -r; d <= r; ++d) {
      const int x0 = std::max(0, -d), x1 = std::min(w, w - d);
      for (int x = x0; x < x1; ++x) out[x] += in[x + d];
    }
  }
  std::fill(dst, dst + static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    double* out = dst + static_cast<std::size_t>(y) * w;
    for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy) {
      const double* in = rows.data() + static_cast<std::size_t>(yy) * w;
      for (int x = 0; x < w; ++x) out[x] += in[x];
    }
  }
}

// 1 / (clipped window length) for each coordinate along an axis of size n.
std::vector<double> inverse_counts(int n, int r) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[i] = 1.0 / (std::min(n - 1, i + r) - std::max(0, i - r) + 1);
  return out;
}

// out = in - (per-channel mean over the clipped (2r+1)^2 window)
void local_mean_sub_forward(const Tensor& in, int r, Tensor& out) {
  const int channels = in.shape[0], h = in.shape[1], w = in.shape[2];
  const auto inv_y = inverse_counts(h, r), inv_x = inverse_counts(w, r);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  thread_local std::vector<double> sums;
  sums.resize(plane);
  for (int c = 0; c < channels; ++c) {
    const double* src = in.data.data() + c * plane;
    double* dst = out.data.data() + c * plane;
    box_sum(src, sums.data(), h, w, r);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        dst[i] = src[i] - sums[i] * inv_y[y] * inv_x[x];
      }
    }
  }
}

// Adjoint of local_mean_sub_forward. Windows are symmetric, so the mean's
// adjoint is a clipped box sum of g scaled by each output's inverse area.
void local_mean_sub_backward(const Tensor& g, int r, Tensor& out) {
  const int channels = g.shape[0], h = g.shape[1], w = g.shape[2];
  const auto inv_y = inverse_counts(h, r), inv_x = inverse_counts(w, r);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  thread_local std::vector<double> scaled, sums;
  scaled.resize(plane);
  sums.resize(plane);
  for (int c = 0; c < channels; ++c) {
    const double* src = g.data.data() + c * plane;
    double* dst = out.data.data() + c * plane;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        scaled[i] = src[i] * inv_y[y] * inv_x[x];
      }
    }
    box_sum(scaled.data(), sums.data(), h, w, r);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] - sums[i];
  }
}

// Gathers every receptive-field tap into a row: cols[r * n + pos] with
// r = (c * k + ky) * k + kx and pos = oy * ow + ox.
void im2col(const Tensor& in, int k, int stride, int oh, int ow, std::vector<double>& cols) {
  const int channels = in.shape[0], height = in.shape[1], width = in.shape[2];
  const std::size_t n = static_cast<std::size_t>(oh) * ow;
  cols.resize(static_cast<std::size_t>(channels) * k * k * n);
  double* dst = cols.data();
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        for (int oy = 0; oy < oh; ++oy) {
          const double* src = in.data.data() + (static_cast<std::size_t>(c) * height + oy * stride + ky) * width + kx;
          for (int ox = 0; ox < ow; ++ox) *dst++ = src[ox * stride];
        }
      }
    }
  }
}

void conv_forward(const Layer& layer, const Tensor& in, Tensor& out) {
  const int out_ch = out.shape[0], oh = out.shape[1], ow = out.shape[2];
  const int k = layer.hyper[2], stride = layer.hyper[3];
  const std::size_t n = static_cast<std::size_t>(oh) * ow;
  const std::size_t taps = static_cast<std::size_t>(in.shape[0]) * k * k;
  thread_local std::vector<double> cols;
  im2col(in, k, stride, oh, ow, cols);
  const double* w = layer.weights.data.data();
  for (int o = 0; o < out_ch; ++o) {
    double* dst = out.data.data() + o * n;
    std::fill(dst, dst + n, layer.bias.data[o]);
    for (std::size_t r = 0; r < taps; ++r) {
      const double wv = w[o * taps + r];
      const double* col = cols.data() + r * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] += wv * col[i];
    }
  }
}

// Accumulates weight/bias gradients and (optionally) the input gradient.
void conv_backward(const Layer& layer, const Tensor& in, const Tensor& grad_out, Tensor* dw, Tensor* db,
                   Tensor* grad_in) {
  const int channels = in.shape[0], height = in.shape[1], width = in.shape[2];
  const int out_ch = grad_out.shape[0], oh = grad_out.shape[1], ow = grad_out.shape[2];
  const int k = layer.hyper[2], stride = layer.hyper[3];
  const std::size_t n = static_cast<std::size_t>(oh) * ow;
  const std::size_t taps = static_cast<std::size_t>(channels) * k * k;
  const double* w = layer.weights.data.data();

  if (db) {
    for (int o = 0; o < out_ch; ++o) {
      const double* g = grad_out.data.data() + o * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += g[i];
      db->data[o] += acc;
    }
  }
  if (dw) {
    thread_local std::vector<double> cols;
    im2col(in, k, stride, oh, ow, cols);
    for (int o = 0; o < out_ch; ++o) {
      const double* g = grad_out.data.data() + o * n;
      for (std::size_t r = 0; r < taps; ++r) {
        const double* col = cols.data() + r * n;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i] * col[i];
        dw->data[o * taps + r] += acc;
      }
    }
  }
  if (grad_in) {
    thread_local std::vector<double> col_grad;
    col_grad.assign(taps * n, 0.0);
    for (int o = 0; o < out_ch; ++o) {
      const double* g = grad_out.data.data() + o * n;
      for (std::size_t r = 0; r < taps; ++r) {
        const double wv = w[o * taps + r];
        double* dst = col_grad.data() + r * n;
        for (std::size_t i = 0; i < n; ++i) dst[i] += wv * g[i];
      }
    }
    const double* src = col_grad.data();
    for (int c = 0; c < channels; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          for (int oy = 0; oy < oh; ++oy) {
            double* dst = grad_in->data.data() + (static_cast<std::size_t>(c) * height + oy * stride + ky) * width + kx;
            for (int ox = 0; ox < ow; ++ox) dst[ox * stride] += *src++;
          }
        }
      }
    }
  }
}

Tensor backward_impl(const Network& net, const Trace& trace, const Tensor& out_grad, Gradients* accum, bool guided,
                     bool need_input_grad = true) {
  const auto& layers = net.layers();
  if (trace.activations.size() != layers.size() + 1) {
    throw ShapeError("trace does not belong to this network");
  }
  if (out_grad.size() != trace.output().size()) {
    throw ShapeError("output gradient has " + std::to_string(out_grad.size()) + " values, network output has " +
                     std::to_string(trace.output().size()));
  }
  Tensor grad = out_grad;
  grad.shape = trace.output().shape;
  // Without an input gradient, nothing below the first parameterized layer
  // contributes.
  std::size_t stop = 0;
  if (!need_input_grad) {
    while (stop < layers.size() && !layers[stop].has_parameters()) ++stop;
    if (stop == layers.size()) return Tensor(trace.activations.front().shape);
  }
  for (std::size_t li = layers.size(); li-- > stop;) {
    const Layer& layer = layers[li];
    const Tensor& in = trace.activations[li];
    const Tensor& out = trace.activations[li + 1];
    if (out.size() != grad.size() || layer_output_shape(layer, in.shape) != out.shape) {
      throw ShapeError("stale trace at layer " + std::to_string(li));
    }
    Tensor next(in.shape);
    switch (layer.kind) {
      case LayerKind::dense: {
        const int n_in = layer.hyper[0], n_out = layer.hyper[1];
        const double* w = layer.weights.data.data();
        for (int j = 0; j < n_out; ++j) {
          const double g = grad.data[j];
          if (accum) {
            double* dw = accum->weights[li].data.data() + static_cast<std::size_t>(j) * n_in;
            for (int i = 0; i < n_in; ++i) dw[i] += g * in.data[i];
            accum->bias[li].data[j] += g;
          }
          const double* wr = w + static_cast<std::size_t>(j) * n_in;
          for (int i = 0; i < n_in; ++i) next.data[i] += wr[i] * g;
        }
        break;
      }
      case LayerKind::conv2d:
        conv_backward(layer, in, grad, accum ? &accum->weights[li] : nullptr, accum ? &accum->bias[li] : nullptr,
                      (li > stop || need_input_grad) ? &next : nullptr);
        break;
      case LayerKind::relu:
        for (std::size_t i = 0; i < in.size(); ++i) {
          const bool pass = in.data[i] > 0.0 && (!guided || grad.data[i] > 0.0);
          next.data[i] = pass ? grad.data[i] : 0.0;
        }
        break;
      case LayerKind::sigmoid:
        for (std::size_t i = 0; i < in.size(); ++i) next.data[i] = grad.data[i] * out.data[i] * (1.0 - out.data[i]);
        break;
      case LayerKind::softplus:
        for (std::size_t i = 0; i < in.size(); ++i) next.data[i] = grad.data[i] * sigmoid(in.data[i]);
        break;
      case LayerKind::local_mean_sub:
        local_mean_sub_backward(grad, layer.hyper[0], next);
        break;
      case LayerKind::global_avg_pool: {
        const std::size_t plane = static_cast<std::size_t>(in.shape[1]) * in.shape[2];
        for (int c = 0; c < in.shape[0]; ++c) {
          const double g = grad.data[c] / static_cast<double>(plane);
          std::fill(next.data.begin() + c * plane, next.data.begin() + (c + 1) * plane, g);
        }
        break;
      }
    }
    grad = std::move(next);
  }
  if (!need_input_grad) return Tensor(trace.activations.front().shape);
  return grad;
}

int fan_in(const Layer& l) { return l.kind == LayerKind::dense ? l.hyper[0] : l.hyper[0] * l.hyper[2] * l.hyper[2]; }
int fan_out(const Layer& l) { return l.kind == LayerKind::dense ? l.hyper[1] : l.hyper[1] * l.hyper[2] * l.hyper[2]; }

}  // namespace

Tensor::Tensor(std::vector<int> dims, double fill) : shape(std::move(dims)), data(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<int> dims, std::vector<double> values) : shape(std::move(dims)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) throw ShapeError("tensor data does not match shape " + shape_string(shape));
}

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::softplus: return "softplus";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::local_mean_sub: return "local_mean_sub";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (LayerKind k : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu, LayerKind::sigmoid, LayerKind::softplus,
                      LayerKind::global_avg_pool, LayerKind::local_mean_sub}) {
    if (layer_kind_name(k) == name) return k;
  }
  throw InputError("unknown layer kind '" + name + "'");
}

Layer Layer::dense(int in, int out) {
  if (in < 1 || out < 1) throw InputError("dense layer sizes must be positive");
  Layer l;
  l.kind = LayerKind::dense;
  l.hyper = {in, out};
  l.weights = Tensor({out, in});
  l.bias = Tensor({out});
  return l;
}

Layer Layer::conv2d(int in_channels, int out_channels, int kernel, int stride) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1) {
    throw InputError("conv2d hyperparameters must be positive");
  }
  Layer l;
  l.kind = LayerKind::conv2d;
  l.hyper = {in_channels, out_channels, kernel, stride};
  l.weights = Tensor({out_channels, in_channels, kernel, kernel});
  l.bias = Tensor({out_channels});
  return l;
}

Layer Layer::activation(LayerKind kind) {
  if (kind == LayerKind::dense || kind == LayerKind::conv2d || kind == LayerKind::local_mean_sub) {
    throw InputError("not an activation kind");
  }
  Layer l;
  l.kind = kind;
  return l;
}

Layer Layer::local_mean_sub(int radius) {
  if (radius < 1) throw InputError("local_mean_sub radius must be positive");
  Layer l;
  l.kind = LayerKind::local_mean_sub;
  l.hyper = {radius};
  return l;
}

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) {}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<int> Network::output_shape(const std::vector<int>& input_shape) const {
  std::vector<int> shape = input_shape;
  for (const Layer& l : layers_) shape = layer_output_shape(l, shape);
  return shape;
}

void init_parameters(Network& net, Rng& rng) {
  auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Layer& l = layers[i];
    if (!l.has_parameters()) continue;
    const bool feeds_relu = i + 1 < layers.size() && layers[i + 1].kind == LayerKind::relu;
    const double limit = feeds_relu ? std::sqrt(6.0 / fan_in(l)) : std::sqrt(6.0 / (fan_in(l) + fan_out(l)));
    for (double& w : l.weights.data) w = rng.uniform(-limit, limit);
    std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0);
  }
}

Trace forward(const Network& net, Tensor input) {
  Trace trace;
  trace.activations.reserve(net.layers().size() + 1);
  trace.activations.push_back(std::move(input));
  for (const Layer& layer : net.layers()) {
    const Tensor& in = trace.activations.back();
    Tensor out(layer_output_shape(layer, in.shape));
    switch (layer.kind) {
      case LayerKind::dense: {
        const int n_in = layer.hyper[0], n_out = layer.hyper[1];
        for (int j = 0; j < n_out; ++j) {
          const double* wr = layer.weights.data.data() + static_cast<std::size_t>(j) * n_in;
          double acc = layer.bias.data[j];
          for (int i = 0; i < n_in; ++i) acc += wr[i] * in.data[i];
          out.data[j] = acc;
        }
        break;
      }
      case LayerKind::conv2d:
        conv_forward(layer, in, out);
        break;
      case LayerKind::relu:
        if (g_active_probe) ReluProbe::record(in.data);
        for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
        break;
      case LayerKind::sigmoid:
        for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = sigmoid(in.data[i]);
        break;
      case LayerKind::softplus:
        for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = softplus(in.data[i]);
        break;
      case LayerKind::local_mean_sub:
        local_mean_sub_forward(in, layer.hyper[0], out);
        break;
      case LayerKind::global_avg_pool: {
        const std::size_t plane = static_cast<std::size_t>(in.shape[1]) * in.shape[2];
        for (int c = 0; c < in.shape[0]; ++c) {
          const double sum = std::accumulate(in.data.begin() + c * plane, in.data.begin() + (c + 1) * plane, 0.0);
          out.data[c] = sum / static_cast<double>(plane);
        }
        break;
      }
    }
    trace.activations.push_back(std::move(out));
  }
  return trace;
}

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  for (const Layer& l : net.layers()) {
    g.weights.emplace_back(l.weights.shape.empty() ? std::vector<int>{0} : l.weights.shape);
    g.bias.emplace_back(l.bias.shape.empty() ? std::vector<int>{0} : l.bias.shape);
  }
  return g;
}

void Gradients::add(const Gradients& other, double factor) {
  if (other.weights.size() != weights.size()) throw ShapeError("gradient sets belong to different networks");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i].size() != other.weights[i].size() || bias[i].size() != other.bias[i].size()) {
      throw ShapeError("gradient shapes differ at layer " + std::to_string(i));
    }
    for (std::size_t j = 0; j < weights[i].size(); ++j) weights[i].data[j] += factor * other.weights[i].data[j];
    for (std::size_t j = 0; j < bias[i].size(); ++j) bias[i].data[j] += factor * other.bias[i].data[j];
  }
}

void Gradients::scale(double factor) {
  for (auto* group : {&weights, &bias}) {
    for (Tensor& t : *group) {
      for (double& v : t.data) v *= factor;
    }
  }
}

std::vector<double> Gradients::flatten() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.insert(out.end(), weights[i].data.begin(), weights[i].data.end());
    out.insert(out.end(), bias[i].data.begin(), bias[i].data.end());
  }
  return out;
}

bool Gradients::all_zero() const {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (double v : weights[i].data) {
      if (v != 0.0) return false;
    }
    for (double v : bias[i].data) {
      if (v != 0.0) return false;
    }
  }
  return true;
}

BackwardResult backward(const Network& net, const Trace& trace, const Tensor& out_grad) {
  BackwardResult result{Gradients::zeros_like(net), {}};
  result.input_grad = backward_impl(net, trace, out_grad, &result.params, false);
  return result;
}

Tensor backward_into(const Network& net, const Trace& trace, const Tensor& out_grad, Gradients* accum,
                     bool need_input_grad) {
  return backward_impl(net, trace, out_grad, accum, false, need_input_grad);
}

Tensor guided_backward(const Network& net, const Trace& trace, const Tensor& out_grad) {
  return backward_impl(net, trace, out_grad, nullptr, true);
}

AdamState AdamState::for_network(const Network& net) {
  AdamState s;
  s.first_moment = Gradients::zeros_like(net);
  s.second_moment = Gradients::zeros_like(net);
  return s;
}

void adam_step(Network& net, const Gradients& grads, AdamState& state, double lr) {
  auto& layers = net.layers();
  if (grads.weights.size() != layers.size() || state.first_moment.weights.size() != layers.size()) {
    throw ShapeError("adam_step: gradients or optimizer state do not match the network");
  }
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](Tensor& param, const Tensor& g, Tensor& m, Tensor& v) {
    if (param.size() != g.size() || m.size() != g.size() || v.size() != g.size()) {
      throw ShapeError("adam_step: parameter/gradient shape mismatch");
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g.data[i];
      v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
      const double m_hat = m.data[i] / c1;
      const double v_hat = v.data[i] / c2;
      param.data[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].has_parameters()) continue;
    update(layers[i].weights, grads.weights[i], state.first_moment.weights[i], state.second_moment.weights[i]);
    update(layers[i].bias, grads.bias[i], state.first_moment.bias[i], state.second_moment.bias[i]);
  }
}

std::vector<double*> parameter_pointers(Network& net) {
  std::vector<double*> out;
  for (Layer& l : net.layers()) {
    for (double& w : l.weights.data) out.push_back(&w);
    for (double& b : l.bias.data) out.push_back(&b);
  }
  return out;
}

std::vector<double> flatten_parameters(const Network& net) {
  std::vector<double> out;
  for (const Layer& l : net.layers()) {
    out.insert(out.end(), l.weights.data.begin(), l.weights.data.end());
    out.insert(out.end(), l.bias.data.begin(), l.bias.data.end());
  }
  return out;
}

LossFunction quadratic_loss(Tensor target) {
  auto shared = std::make_shared<Tensor>(std::move(target));
  return {[shared](const Tensor& out) {
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) {
              const double d = out.data[i] - shared->data[i];
              s += d * d;
            }
            return 0.5 * s;
          },
          [shared](const Tensor& out) {
            Tensor g(out.shape);
            for (std::size_t i = 0; i < out.size(); ++i) g.data[i] = out.data[i] - shared->data[i];
            return g;
          }};
}

ReluProbe::ReluProbe() : previous_(g_active_probe) { g_active_probe = this; }
ReluProbe::~ReluProbe() { g_active_probe = previous_; }

void ReluProbe::record(const std::vector<double>& relu_inputs) {
  if (!g_active_probe) return;
  auto& signs = g_active_probe->signs_;
  for (double x : relu_inputs) signs.push_back(x > 1e-6 ? 1 : (x < -1e-6 ? -1 : 0));
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(const std::vector<double*>& params, const std::vector<double>& analytic,
                                const std::function<double()>& loss, double h) {
  if (params.size() != analytic.size()) throw ShapeError("check_gradients: parameter/gradient count mismatch");
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& p = *params[i];
    const double saved = p;
    ReluProbe plus_probe;
    p = saved + h;
    const double f_plus = loss();
    std::vector<signed char> plus_signs = plus_probe.signs();
    plus_probe.clear();
    p = saved - h;
    const double f_minus = loss();
    p = saved;
    const auto& minus_signs = plus_probe.signs();
    const bool kink = plus_signs != minus_signs ||
                      std::find(plus_signs.begin(), plus_signs.end(), 0) != plus_signs.end();
    if (kink) {
      ++result.skipped;
      continue;
    }
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric));
    ++result.checked;
  }
  return result;
}

GradCheckResult grad_check(Network& net, const LossFunction& loss, const Tensor& input, double h) {
  if (net.param_count() > kGradCheckMaxParams) {
    throw InputError("grad_check: network has " + std::to_string(net.param_count()) + " parameters (limit " +
                     std::to_string(kGradCheckMaxParams) + ")");
  }
  Tensor x = input;
  const Trace trace = forward(net, x);
  const BackwardResult analytic = backward(net, trace, loss.gradient(trace.output()));

  std::vector<double*> coords = parameter_pointers(net);
  std::vector<double> grads = analytic.params.flatten();
  for (std::size_t i = 0; i < x.size(); ++i) {
    coords.push_back(&x.data[i]);
    grads.push_back(analytic.input_grad.data[i]);
  }
  return check_gradients(coords, grads, [&] { return loss.value(forward(net, x).output()); }, h);
}

}  // namespace viqa::nn
