#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "tjlab/error.hpp"
#include "tjlab/network.hpp"
#include "tjlab/rng.hpp"
#include "tjlab/tensor_set.hpp"

namespace tjlab {

// Mini-batch SGD with momentum on softmax cross-entropy.
struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lr_decay = 1.0;  // multiplied into the learning rate after every epoch
  std::uint64_t seed = 1;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  std::optional<double> valid_loss;
  std::optional<double> valid_accuracy;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

template <std::floating_point T>
struct TrainResult {
  Network<T> model;
  TrainHistory history;
};

template <std::floating_point T>
struct LossAccuracy {
  double loss = 0;
  double accuracy = 0;
};

template <std::floating_point T>
LossAccuracy<T> evaluate_loss(const Network<T>& net, const TensorSet<T>& data) {
  LossAccuracy<T> r;
  if (data.empty()) return r;
  std::vector<T> g(static_cast<std::size_t>(net.label_count()));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = net.forward(data.sample(i));
    r.loss += softmax_cross_entropy<T>(s, data.labels[i], g);
    if (argmax<T>(s) == data.labels[i]) ++hits;
  }
  r.loss /= static_cast<double>(data.size());
  r.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  return r;
}

template <std::floating_point T>
TrainResult<T> train(Network<T> net, const TensorSet<T>& data, const std::type_identity_t<TensorSet<T>>* valid,
                     const TrainConfig& cfg) {
  if (data.empty()) throw Error("train: empty dataset");
  if (data.shape != net.input_shape()) {
    throw ShapeError("train: dataset shape " + to_string(data.shape) + " does not match network input " +
                     to_string(net.input_shape()));
  }
  for (int y : data.labels) {
    if (y < 0 || y >= net.label_count()) {
      throw ShapeError("train: label " + std::to_string(y) + " outside [0, " + std::to_string(net.label_count()) + ")");
    }
  }
  if (cfg.batch_size <= 0) throw Error("train: batch_size must be positive");

  TrainHistory hist;
  Rng rng(cfg.seed);
  auto velocity = net.zero_like();
  double lr = cfg.learning_rate;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  std::vector<std::span<const T>> xs;
  std::vector<int> ys;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = permutation(data.size(), rng);
    double loss_sum = 0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      xs.clear();
      ys.clear();
      for (std::size_t j = start; j < end; ++j) {
        xs.push_back(data.sample(order[j]));
        ys.push_back(data.labels[order[j]]);
      }
      auto g = gradients<T>(net, xs, ys, false);
      if (!std::isfinite(static_cast<double>(g.loss))) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch), epoch);
      }
      loss_sum += static_cast<double>(g.loss) * static_cast<double>(end - start);
      hits += static_cast<std::size_t>(g.correct);
      if (lr == 0.0) continue;
      const T tlr = static_cast<T>(lr), mom = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay);
      auto& P = net.params();
      for (std::size_t l = 0; l < P.size(); ++l) {
        auto step = [&](std::vector<T>& w, std::vector<T>& v, const std::vector<T>& gw, bool decay) {
          for (std::size_t k = 0; k < w.size(); ++k) {
            const T grad = gw[k] + (decay ? wd * w[k] : T(0));
            v[k] = mom * v[k] - tlr * grad;
            w[k] += v[k];
          }
        };
        step(P[l].weights, velocity[l].weights, g.params[l].weights, true);
        step(P[l].bias, velocity[l].bias, g.params[l].bias, false);
      }
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(data.size());
    st.train_accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
    if (valid && !valid->empty()) {
      const auto v = evaluate_loss(net, *valid);
      st.valid_loss = v.loss;
      st.valid_accuracy = v.accuracy;
    }
    hist.epochs.push_back(st);
    lr *= cfg.lr_decay;
  }
  return {std::move(net), std::move(hist)};
}

}  // namespace tjlab
