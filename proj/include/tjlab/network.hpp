#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tjlab/error.hpp"
#include "tjlab/rng.hpp"

namespace tjlab {

enum class LayerKind : std::uint8_t {
  conv2d = 0,
  dense = 1,
  flatten = 2,
  // Spatial mean per channel. Parameter-free; it is what lets the small
  // reference geometry end in a 16-wide feature vector.
  global_avg_pool = 3,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::flatten: return "flatten";
    case LayerKind::global_avg_pool: return "global_avg_pool";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  int units = 0;  // output channels (conv2d) or neurons (dense); unused otherwise
  int kernel = 0;
  int stride = 1;
  int padding = 0;

  static LayerSpec conv(int units, int kernel, int stride = 1) {
    return {LayerKind::conv2d, units, kernel, stride, kernel / 2};
  }
  static LayerSpec conv_valid(int units, int kernel, int stride = 1) {
    return {LayerKind::conv2d, units, kernel, stride, 0};
  }
  static LayerSpec dense(int units) { return {LayerKind::dense, units, 0, 1, 0}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 1, 0}; }
  static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool, 0, 0, 1, 0}; }

  bool has_params() const noexcept { return kind == LayerKind::conv2d || kind == LayerKind::dense; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Tensors are stored channel-major (C, H, W). Dense activations use H = W = 1.
struct Shape {
  int channels = 0;
  int height = 1;
  int width = 1;

  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const noexcept { return plane() * static_cast<std::size_t>(channels); }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

// A hidden unit: the output channel of a conv2d layer, or a neuron of a
// non-final dense layer. `layer` indexes Network::layers() (0-based).
struct NeuronRef {
  std::size_t layer = 0;
  int unit = 0;
  friend bool operator==(const NeuronRef&, const NeuronRef&) = default;
  friend auto operator<=>(const NeuronRef&, const NeuronRef&) = default;
};

inline std::string to_string(const NeuronRef& n) {
  return "L" + std::to_string(n.layer) + ":" + std::to_string(n.unit);
}

// Replaces the post-ReLU value of one hidden unit. For conv2d layers the whole
// feature map of the channel is set to `value`.
template <std::floating_point T>
struct ActivationOverride {
  NeuronRef target;
  T value = 0;
};

template <std::floating_point T>
struct ParamBlock {
  std::vector<T> weights;
  std::vector<T> bias;
};

// Gradients share the parameter layout: one block per layer (empty for
// parameter-free layers).
template <std::floating_point T>
using ParamSet = std::vector<ParamBlock<T>>;

template <std::floating_point T>
void zero(ParamSet<T>& p) {
  for (auto& b : p) {
    std::fill(b.weights.begin(), b.weights.end(), T(0));
    std::fill(b.bias.begin(), b.bias.end(), T(0));
  }
}

template <std::floating_point T>
void scale(ParamSet<T>& p, T s) {
  for (auto& b : p) {
    for (auto& w : b.weights) w *= s;
    for (auto& w : b.bias) w *= s;
  }
}

// Per-layer outputs of one forward pass; outputs[i] is the post-activation
// output of layer i. `input` is the network input.
template <std::floating_point T>
struct Trace {
  std::vector<T> input;
  std::vector<std::vector<T>> outputs;

  std::span<const T> scores() const { return outputs.back(); }
};

template <std::floating_point T>
class Network {
 public:
  using value_type = T;

  Network() = default;

  Network(Shape input, std::vector<LayerSpec> layers) : input_(input), layers_(std::move(layers)) {
    if (input_.channels <= 0 || input_.height <= 0 || input_.width <= 0) {
      throw ShapeError("network input shape must be positive, got " + to_string(input_));
    }
    if (layers_.empty()) throw ShapeError("network needs at least one layer");
    if (layers_.back().kind != LayerKind::dense) {
      throw ShapeError("the output layer must be dense");
    }
    Shape cur = input_;
    params_.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& L = layers_[i];
      const std::string where = "layer " + std::to_string(i) + " (" + to_string(L.kind) + ")";
      switch (L.kind) {
        case LayerKind::conv2d: {
          if (L.units <= 0) throw ShapeError(where + ": unit count must be > 0");
          if (L.kernel <= 0 || L.kernel % 2 == 0) throw ShapeError(where + ": kernel must be odd and positive");
          if (L.stride <= 0 || L.padding < 0) throw ShapeError(where + ": bad stride/padding");
          const int oh = (cur.height + 2 * L.padding - L.kernel) / L.stride + 1;
          const int ow = (cur.width + 2 * L.padding - L.kernel) / L.stride + 1;
          if (oh <= 0 || ow <= 0 || cur.height + 2 * L.padding < L.kernel || cur.width + 2 * L.padding < L.kernel) {
            throw ShapeError(where + ": kernel larger than padded input " + to_string(cur));
          }
          params_[i].weights.assign(static_cast<std::size_t>(L.units) * cur.channels * L.kernel * L.kernel, T(0));
          params_[i].bias.assign(static_cast<std::size_t>(L.units), T(0));
          cur = {L.units, oh, ow};
          break;
        }
        case LayerKind::dense: {
          if (L.units <= 0) throw ShapeError(where + ": unit count must be > 0");
          if (cur.plane() != 1) {
            throw ShapeError(where + ": dense input must be flat, got " + to_string(cur) +
                             " (insert flatten or global_avg_pool)");
          }
          params_[i].weights.assign(static_cast<std::size_t>(L.units) * cur.channels, T(0));
          params_[i].bias.assign(static_cast<std::size_t>(L.units), T(0));
          cur = {L.units, 1, 1};
          break;
        }
        case LayerKind::flatten:
          cur = {static_cast<int>(cur.size()), 1, 1};
          break;
        case LayerKind::global_avg_pool:
          cur = {cur.channels, 1, 1};
          break;
      }
      shapes_.push_back(cur);
    }
  }

  const Shape& input_shape() const noexcept { return input_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  const Shape& output_shape(std::size_t layer) const { return shapes_.at(layer); }
  int label_count() const { return layers_.empty() ? 0 : layers_.back().units; }

  ParamSet<T>& params() noexcept { return params_; }
  const ParamSet<T>& params() const noexcept { return params_; }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& b : params_) n += b.weights.size() + b.bias.size();
    return n;
  }

  // Conv layers and every dense layer except the output carry a ReLU.
  bool has_relu(std::size_t layer) const {
    const auto k = layers_.at(layer).kind;
    return k == LayerKind::conv2d || (k == LayerKind::dense && layer + 1 != layers_.size());
  }

  bool is_hidden_unit(const NeuronRef& n) const {
    return n.layer < layers_.size() && has_relu(n.layer) && n.unit >= 0 && n.unit < layers_[n.layer].units;
  }

  std::vector<NeuronRef> hidden_units() const {
    std::vector<NeuronRef> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!has_relu(i)) continue;
      for (int u = 0; u < layers_[i].units; ++u) out.push_back({i, u});
    }
    return out;
  }

  // He-normal weights, zero biases.
  void init_he(std::uint64_t seed) {
    Rng rng(seed);
    Shape cur = input_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& L = layers_[i];
      if (L.has_params()) {
        const double fan_in = L.kind == LayerKind::conv2d ? double(cur.channels) * L.kernel * L.kernel
                                                          : double(cur.channels);
        const double sd = std::sqrt(2.0 / fan_in);
        for (auto& w : params_[i].weights) w = static_cast<T>(sd * normal(rng));
        std::fill(params_[i].bias.begin(), params_[i].bias.end(), T(0));
      }
      cur = shapes_[i];
    }
  }

  template <std::floating_point U>
  Network<U> cast() const {
    Network<U> out(input_, layers_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      std::transform(params_[i].weights.begin(), params_[i].weights.end(), out.params()[i].weights.begin(),
                     [](T v) { return static_cast<U>(v); });
      std::transform(params_[i].bias.begin(), params_[i].bias.end(), out.params()[i].bias.begin(),
                     [](T v) { return static_cast<U>(v); });
    }
    return out;
  }

  ParamSet<T> zero_like() const {
    ParamSet<T> g(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      g[i].weights.assign(params_[i].weights.size(), T(0));
      g[i].bias.assign(params_[i].bias.size(), T(0));
    }
    return g;
  }

  void check_input(std::span<const T> x) const {
    if (x.size() != input_.size()) {
      throw ShapeError("input has " + std::to_string(x.size()) + " values, network expects " +
                       std::to_string(input_.size()) + " (" + to_string(input_) + ")");
    }
  }

  void check_override(const ActivationOverride<T>& ov) const {
    if (!is_hidden_unit(ov.target)) {
      throw ShapeError("override target " + to_string(ov.target) + " is not a hidden unit");
    }
    if (!(ov.value >= T(0))) throw ShapeError("override value must be >= 0 (it replaces a ReLU output)");
  }

  // Raw output scores u_K.
  std::vector<T> forward(std::span<const T> x) const {
    check_input(x);
    return run_from(0, std::vector<T>(x.begin(), x.end()), nullptr);
  }

  std::vector<T> forward_with_override(std::span<const T> x, const ActivationOverride<T>& ov) const {
    check_input(x);
    check_override(ov);
    return run_from(0, std::vector<T>(x.begin(), x.end()), &ov);
  }

  // Records layers [0, last]; `last` defaults to the output layer.
  Trace<T> trace(std::span<const T> x, const ActivationOverride<T>* ov = nullptr,
                 std::optional<std::size_t> last = std::nullopt) const {
    check_input(x);
    if (ov) check_override(*ov);
    const std::size_t end = last ? std::min(*last + 1, layers_.size()) : layers_.size();
    Trace<T> t;
    t.input.assign(x.begin(), x.end());
    t.outputs.resize(end);
    const std::vector<T>* in = &t.input;
    for (std::size_t i = 0; i < end; ++i) {
      apply_layer(i, *in, t.outputs[i]);
      if (ov && ov->target.layer == i) set_unit(i, t.outputs[i], ov->target.unit, ov->value);
      in = &t.outputs[i];
    }
    return t;
  }

  // Runs layers [first, end) on `activation`, which must be the input of layer
  // `first`. Lets stimulation sweeps reuse cached prefixes.
  std::vector<T> run_from(std::size_t first, std::vector<T> activation, const ActivationOverride<T>* ov) const {
    std::vector<T> next;
    for (std::size_t i = first; i < layers_.size(); ++i) {
      apply_layer(i, activation, next);
      if (ov && ov->target.layer == i) set_unit(i, next, ov->target.unit, ov->value);
      activation.swap(next);
    }
    return activation;
  }

  // Output of layer `last` (inclusive) without running the rest.
  std::vector<T> run_until(std::span<const T> x, std::size_t last) const {
    check_input(x);
    std::vector<T> cur(x.begin(), x.end()), next;
    for (std::size_t i = 0; i <= last; ++i) {
      apply_layer(i, cur, next);
      cur.swap(next);
    }
    return cur;
  }

  void set_unit(std::size_t layer, std::vector<T>& out, int unit, T value) const {
    const std::size_t plane = shapes_[layer].plane();
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(unit * plane), plane, value);
  }

  // Back-propagates dL/d(outputs[from]) through layers from..0. Parameter
  // gradients are accumulated into `grads` when given; the gradient w.r.t. the
  // network input is returned when `want_input` is set (empty otherwise).
  // Overrides are not differentiated: traces used here must be override-free.
  std::vector<T> backward(const Trace<T>& t, std::size_t from, std::vector<T> grad, ParamSet<T>* grads,
                          bool want_input) const {
    std::vector<T> gin;
    for (std::size_t ii = from + 1; ii-- > 0;) {
      const std::vector<T>& out = t.outputs[ii];
      const std::vector<T>& in = ii == 0 ? t.input : t.outputs[ii - 1];
      if (has_relu(ii)) {
        for (std::size_t j = 0; j < grad.size(); ++j) {
          if (!(out[j] > T(0))) grad[j] = T(0);
        }
      }
      const bool need_in = ii > 0 || want_input;
      backward_layer(ii, in, grad, grads ? &(*grads)[ii] : nullptr, need_in ? &gin : nullptr);
      if (!need_in) return {};
      grad.swap(gin);
    }
    return grad;
  }

 private:
  Shape in_shape(std::size_t i) const { return i == 0 ? input_ : shapes_[i - 1]; }

  void apply_layer(std::size_t i, const std::vector<T>& in, std::vector<T>& out) const {
    const auto& L = layers_[i];
    const Shape is = in_shape(i);
    const Shape os = shapes_[i];
    out.assign(os.size(), T(0));
    switch (L.kind) {
      case LayerKind::conv2d:
        conv_forward(L, is, os, params_[i], in.data(), out.data());
        break;
      case LayerKind::dense: {
        const auto& W = params_[i].weights;
        const auto& b = params_[i].bias;
        const std::size_t n_in = is.size();
        for (int o = 0; o < os.channels; ++o) {
          const T* w = W.data() + static_cast<std::size_t>(o) * n_in;
          T acc = b[o];
          for (std::size_t j = 0; j < n_in; ++j) acc += w[j] * in[j];
          out[o] = acc;
        }
        break;
      }
      case LayerKind::flatten:
        std::copy(in.begin(), in.end(), out.begin());
        break;
      case LayerKind::global_avg_pool: {
        const std::size_t plane = is.plane();
        for (int c = 0; c < is.channels; ++c) {
          T acc = 0;
          const T* p = in.data() + c * plane;
          for (std::size_t j = 0; j < plane; ++j) acc += p[j];
          out[c] = acc / static_cast<T>(plane);
        }
        break;
      }
    }
    if (has_relu(i)) {
      for (auto& v : out) v = v > T(0) ? v : T(0);
    }
  }

  void backward_layer(std::size_t i, const std::vector<T>& in, const std::vector<T>& gout, ParamBlock<T>* pg,
                      std::vector<T>* gin) const {
    const auto& L = layers_[i];
    const Shape is = in_shape(i);
    const Shape os = shapes_[i];
    if (gin) gin->assign(is.size(), T(0));
    switch (L.kind) {
      case LayerKind::conv2d:
        conv_backward(L, is, os, params_[i], in.data(), gout.data(), pg, gin ? gin->data() : nullptr);
        break;
      case LayerKind::dense: {
        const auto& W = params_[i].weights;
        const std::size_t n_in = is.size();
        for (int o = 0; o < os.channels; ++o) {
          const T g = gout[o];
          if (g == T(0)) continue;
          if (pg) {
            T* gw = pg->weights.data() + static_cast<std::size_t>(o) * n_in;
            for (std::size_t j = 0; j < n_in; ++j) gw[j] += g * in[j];
            pg->bias[o] += g;
          }
          if (gin) {
            const T* w = W.data() + static_cast<std::size_t>(o) * n_in;
            for (std::size_t j = 0; j < n_in; ++j) (*gin)[j] += g * w[j];
          }
        }
        break;
      }
      case LayerKind::flatten:
        if (gin) std::copy(gout.begin(), gout.end(), gin->begin());
        break;
      case LayerKind::global_avg_pool:
        if (gin) {
          const std::size_t plane = is.plane();
          for (int c = 0; c < is.channels; ++c) {
            const T g = gout[c] / static_cast<T>(plane);
            std::fill_n(gin->begin() + static_cast<std::ptrdiff_t>(c * plane), plane, g);
          }
        }
        break;
    }
  }

  // Output rows/cols that read input row `oy*stride - pad + k` inside [0, n).
  static void valid_range(int n_in, int n_out, int k, int stride, int pad, int& lo, int& hi) {
    // oy*stride - pad + k >= 0  ->  oy >= ceil((pad - k) / stride)
    const int a = pad - k;
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    // oy*stride - pad + k <= n_in - 1  ->  oy <= floor((n_in - 1 + pad - k) / stride)
    const int b = n_in - 1 + pad - k;
    hi = b < 0 ? -1 : std::min(n_out - 1, b / stride);
  }

  static void conv_forward(const LayerSpec& L, const Shape& is, const Shape& os, const ParamBlock<T>& p, const T* in,
                           T* out) {
    const int K = L.kernel, S = L.stride, P = L.padding;
    const std::size_t iplane = is.plane(), oplane = os.plane();
    for (int oc = 0; oc < os.channels; ++oc) {
      T* o = out + oc * oplane;
      std::fill_n(o, oplane, p.bias[oc]);
      for (int ic = 0; ic < is.channels; ++ic) {
        const T* x = in + ic * iplane;
        const T* w = p.weights.data() + (static_cast<std::size_t>(oc) * is.channels + ic) * K * K;
        for (int ky = 0; ky < K; ++ky) {
          int ylo, yhi;
          valid_range(is.height, os.height, ky, S, P, ylo, yhi);
          for (int kx = 0; kx < K; ++kx) {
            int xlo, xhi;
            valid_range(is.width, os.width, kx, S, P, xlo, xhi);
            const T wv = w[ky * K + kx];
            const int shift = kx - P;
            for (int oy = ylo; oy <= yhi; ++oy) {
              const T* xr = x + (oy * S - P + ky) * is.width;
              T* orow = o + oy * os.width;
              for (int ox = xlo; ox <= xhi; ++ox) orow[ox] += wv * xr[ox * S + shift];
            }
          }
        }
      }
    }
  }

  static void conv_backward(const LayerSpec& L, const Shape& is, const Shape& os, const ParamBlock<T>& p,
                            const T* in, const T* gout, ParamBlock<T>* pg, T* gin) {
    const int K = L.kernel, S = L.stride, P = L.padding;
    const std::size_t iplane = is.plane(), oplane = os.plane();
    for (int oc = 0; oc < os.channels; ++oc) {
      const T* g = gout + oc * oplane;
      bool any = false;
      T gb = 0;
      for (std::size_t j = 0; j < oplane; ++j) {
        gb += g[j];
        any = any || g[j] != T(0);
      }
      if (!any) continue;
      if (pg) pg->bias[oc] += gb;
      for (int ic = 0; ic < is.channels; ++ic) {
        const T* x = in + ic * iplane;
        T* gx = gin ? gin + ic * iplane : nullptr;
        const std::size_t woff = (static_cast<std::size_t>(oc) * is.channels + ic) * K * K;
        const T* w = p.weights.data() + woff;
        T* gw = pg ? pg->weights.data() + woff : nullptr;
        for (int ky = 0; ky < K; ++ky) {
          int ylo, yhi;
          valid_range(is.height, os.height, ky, S, P, ylo, yhi);
          for (int kx = 0; kx < K; ++kx) {
            int xlo, xhi;
            valid_range(is.width, os.width, kx, S, P, xlo, xhi);
            const T wv = w[ky * K + kx];
            const int shift = kx - P;
            T acc = 0;
            for (int oy = ylo; oy <= yhi; ++oy) {
              const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(oy * S - P + ky) * is.width;
              const T* grow = g + oy * os.width;
              if (gw) {
                const T* xr = x + row;
                for (int ox = xlo; ox <= xhi; ++ox) acc += grow[ox] * xr[ox * S + shift];
              }
              if (gx) {
                T* gxr = gx + row;
                for (int ox = xlo; ox <= xhi; ++ox) gxr[ox * S + shift] += wv * grow[ox];
              }
            }
            if (gw) gw[ky * K + kx] += acc;
          }
        }
      }
    }
  }

  Shape input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  ParamSet<T> params_;
};

// Argmax with ties going to the lowest index.
template <std::floating_point T>
int argmax(std::span<const T> scores) {
  int best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

template <std::floating_point T>
int predict(const Network<T>& net, std::span<const T> x) {
  const auto s = net.forward(x);
  return argmax<T>(s);
}

template <std::floating_point T>
int predict_with_override(const Network<T>& net, std::span<const T> x, const ActivationOverride<T>& ov) {
  const auto s = net.forward_with_override(x, ov);
  return argmax<T>(s);
}

// Softmax cross-entropy of raw scores against `label`; writes dL/dscores.
template <std::floating_point T>
T softmax_cross_entropy(std::span<const T> scores, int label, std::span<T> grad) {
  const T m = *std::max_element(scores.begin(), scores.end());
  T sum = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    grad[i] = std::exp(scores[i] - m);
    sum += grad[i];
  }
  for (auto& g : grad) g /= sum;
  const T loss = std::log(sum) + m - scores[static_cast<std::size_t>(label)];
  grad[static_cast<std::size_t>(label)] -= T(1);
  return loss;
}

template <std::floating_point T>
struct BatchGradients {
  T loss = 0;             // mean cross-entropy over the batch
  int correct = 0;        // argmax hits, for training bookkeeping
  ParamSet<T> params;     // d(mean loss)/d(parameters)
  std::vector<std::vector<T>> inputs;  // d(mean loss)/d(input_i), when requested
};

// Gradient of the mean softmax cross-entropy over (inputs[i], labels[i]).
template <std::floating_point T>
BatchGradients<T> gradients(const Network<T>& net, std::span<const std::span<const T>> inputs,
                            std::span<const int> labels, bool want_input_grads = true) {
  if (inputs.empty()) throw Error("gradients: empty batch");
  if (inputs.size() != labels.size()) throw ShapeError("gradients: inputs and labels differ in length");
  BatchGradients<T> out;
  out.params = net.zero_like();
  const std::size_t n = inputs.size();
  const T inv = T(1) / static_cast<T>(n);
  std::vector<T> g(static_cast<std::size_t>(net.label_count()));
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= net.label_count()) {
      throw ShapeError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(net.label_count()) + ")");
    }
    const auto t = net.trace(inputs[i]);
    out.loss += softmax_cross_entropy<T>(t.scores(), labels[i], g);
    if (argmax<T>(t.scores()) == labels[i]) ++out.correct;
    for (auto& v : g) v *= inv;
    auto gi = net.backward(t, net.layer_count() - 1, g, &out.params, want_input_grads);
    if (want_input_grads) out.inputs.push_back(std::move(gi));
  }
  out.loss *= inv;
  return out;
}

}  // namespace tjlab
