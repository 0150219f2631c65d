#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "viqa/error.hpp"
#include "viqa/random.hpp"

// Small trainable network substrate: dense and strided "valid" convolution
// layers, elementwise activations, analytic backprop and Adam.
namespace viqa::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, double fill = 0.0);
  Tensor(std::vector<int> dims, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t shape_size(const std::vector<int>& shape);

// local_mean_sub subtracts, per channel, the mean over a (2r+1)^2 window
// clipped to the plane; it has no parameters.
enum class LayerKind { dense, conv2d, relu, sigmoid, softplus, global_avg_pool, local_mean_sub };

std::string layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

struct Layer {
  LayerKind kind = LayerKind::relu;
  // dense: [out, in]; conv2d: [out_ch, in_ch, k, k]
  Tensor weights;
  Tensor bias;
  // dense: {in, out}; conv2d: {in_ch, out_ch, kernel, stride};
  // local_mean_sub: {radius}
  std::vector<int> hyper;

  static Layer dense(int in, int out);
  static Layer conv2d(int in_channels, int out_channels, int kernel, int stride);
  static Layer activation(LayerKind kind);
  static Layer local_mean_sub(int radius);

  bool has_parameters() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

  friend bool operator==(const Layer&, const Layer&) = default;
};

class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers);

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t param_count() const;

  // Output shape for a given input shape; throws ShapeError when layers do
  // not compose.
  std::vector<int> output_shape(const std::vector<int>& input_shape) const;

  friend bool operator==(const Network&, const Network&) = default;

 private:
  std::vector<Layer> layers_;
};

// He-uniform for layers whose output feeds a relu, Xavier-uniform otherwise.
// Biases start at zero.
void init_parameters(Network& net, Rng& rng);

// activations[0] is the input, activations[i+1] the output of layer i.
struct Trace {
  std::vector<Tensor> activations;
  const Tensor& output() const { return activations.back(); }
};

Trace forward(const Network& net, Tensor input);

// Per-layer parameter gradients, empty for parameterless layers.
struct Gradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> bias;

  static Gradients zeros_like(const Network& net);
  void add(const Gradients& other, double scale = 1.0);
  void scale(double factor);
  // Flattened in network parameter order (per layer: weights then bias).
  std::vector<double> flatten() const;
  bool all_zero() const;
};

struct BackwardResult {
  Gradients params;
  Tensor input_grad;
};

// Gradients of the scalar whose derivative at the network output is out_grad.
BackwardResult backward(const Network& net, const Trace& trace, const Tensor& out_grad);

// Adds parameter gradients into accum instead of allocating a fresh set.
// With need_input_grad false the returned tensor is left zero.
Tensor backward_into(const Network& net, const Trace& trace, const Tensor& out_grad, Gradients* accum,
                     bool need_input_grad = true);

// Guided backpropagation: like backward's input gradient, but each relu
// passes signal only where its forward input and the incoming gradient are
// both positive.
Tensor guided_backward(const Network& net, const Trace& trace, const Tensor& out_grad);

struct AdamState {
  Gradients first_moment;
  Gradients second_moment;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_network(const Network& net);
};

void adam_step(Network& net, const Gradients& grads, AdamState& state, double lr);

// Raw parameter access in flattened order (per layer: weights then bias).
std::vector<double*> parameter_pointers(Network& net);
std::vector<double> flatten_parameters(const Network& net);

struct LossFunction {
  std::function<double(const Tensor&)> value;
  std::function<Tensor(const Tensor&)> gradient;
};

// 0.5 * ||output - target||^2
LossFunction quadratic_loss(Tensor target);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose stencil touches a relu kink
};

constexpr std::size_t kGradCheckMaxParams = 5000;

// Central differences (h = 1e-4) against analytic gradients for every
// parameter coordinate, using |denominator| floored at 1e-8. A coordinate is
// skipped when any relu input lies within 1e-6 of zero, or changes sign,
// across its +-h stencil.
GradCheckResult check_gradients(const std::vector<double*>& params, const std::vector<double>& analytic,
                                const std::function<double()>& loss, double h = 1e-4);

// Checks parameter and input gradients of loss(net(input)).
GradCheckResult grad_check(Network& net, const LossFunction& loss, const Tensor& input, double h = 1e-4);

// Relative error used by the gradient checks.
double relative_error(double analytic, double numeric);

// Records relu inputs on the current thread while alive.
class ReluProbe {
 public:
  ReluProbe();
  ~ReluProbe();
  ReluProbe(const ReluProbe&) = delete;
  ReluProbe& operator=(const ReluProbe&) = delete;

  // -1 / 0 / +1 per recorded relu input, 0 meaning within 1e-6 of zero.
  const std::vector<signed char>& signs() const { return signs_; }
  void clear() { signs_.clear(); }

  static void record(const std::vector<double>& relu_inputs);

 private:
  std::vector<signed char> signs_;
  ReluProbe* previous_;
};

// Serialization container: a text header describing metadata and network
// layouts, then little-endian float32 parameters in header order.
struct Container {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::pair<std::string, Network>> networks;

  const std::string* find_meta(const std::string& key) const;
  const Network* find_network(const std::string& name) const;
};

inline constexpr int kContainerVersion = 1;

void write_container(std::ostream& out, const Container& container);
Container read_container(std::istream& in);

}  // namespace viqa::nn
