#pragma once

#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tjlab/error.hpp"
#include "tjlab/mask.hpp"
#include "tjlab/network.hpp"
#include "tjlab/tensor_set.hpp"

namespace tjlab {

// Rows are true labels, columns predictions.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes)
      : classes_(classes), counts_(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0) {
    if (classes <= 0) throw Error("confusion matrix needs at least one class");
  }

  int classes() const noexcept { return classes_; }

  void add(int truth, int pred) {
    if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_) {
      throw ShapeError("confusion: label out of range");
    }
    ++counts_[index(truth, pred)];
  }

  std::size_t at(int truth, int pred) const { return counts_.at(index(truth, pred)); }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }
  std::size_t trace() const {
    std::size_t n = 0;
    for (int c = 0; c < classes_; ++c) n += at(c, c);
    return n;
  }
  std::size_t row_sum(int truth) const {
    std::size_t n = 0;
    for (int p = 0; p < classes_; ++p) n += at(truth, p);
    return n;
  }
  std::size_t col_sum(int pred) const {
    std::size_t n = 0;
    for (int t = 0; t < classes_; ++t) n += at(t, pred);
    return n;
  }

  // Predictions into class c that were wrong: column sum minus diagonal.
  std::size_t false_positives(int c) const { return col_sum(c) - at(c, c); }

  std::vector<std::size_t> false_positives() const {
    std::vector<std::size_t> fp(static_cast<std::size_t>(classes_));
    for (int c = 0; c < classes_; ++c) fp[static_cast<std::size_t>(c)] = false_positives(c);
    return fp;
  }

  double accuracy() const {
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
  }
  double precision(int c) const {
    const auto s = col_sum(c);
    return s == 0 ? 0.0 : static_cast<double>(at(c, c)) / static_cast<double>(s);
  }
  double recall(int c) const {
    const auto s = row_sum(c);
    return s == 0 ? 0.0 : static_cast<double>(at(c, c)) / static_cast<double>(s);
  }

  // Targeted ASR read off the matrix: wrong predictions into `target` over
  // all samples whose true label is not `target`.
  double targeted_asr(int target) const {
    const auto eligible = total() - row_sum(target);
    return eligible == 0 ? 0.0 : static_cast<double>(false_positives(target)) / static_cast<double>(eligible);
  }

  const std::vector<std::size_t>& counts() const noexcept { return counts_; }

 private:
  std::size_t index(int t, int p) const {
    return static_cast<std::size_t>(t) * static_cast<std::size_t>(classes_) + static_cast<std::size_t>(p);
  }
  int classes_ = 0;
  std::vector<std::size_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, int classes) {
  if (truth.size() != pred.size()) throw ShapeError("confusion: length mismatch");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return cm;
}

template <std::floating_point T>
std::vector<int> predict_all(const Network<T>& net, const TensorSet<T>& data) {
  std::vector<int> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = predict<T>(net, data.sample(i));
  return out;
}

template <std::floating_point T>
std::vector<int> predict_all(const Network<T>& net, const TensorSet<T>& data, const TrojanMask& mask) {
  std::vector<int> out(data.size());
  std::vector<T> buf(data.shape.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    apply_mask<T>(data.sample(i), mask, std::span<T>(buf));
    out[i] = predict<T>(net, buf);
  }
  return out;
}

template <std::floating_point T>
double accuracy(const Network<T>& net, const TensorSet<T>& data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += predict<T>(net, data.sample(i)) == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// Both readings of attack success rate over already-transformed inputs:
//   targeted   - share of non-target samples predicted as `target`
//   untargeted - share of samples whose prediction differs from the true label
struct AttackSuccess {
  std::optional<int> target;
  double targeted = 0;
  double untargeted = 0;
  std::size_t samples = 0;
};

inline AttackSuccess attack_success(std::span<const int> truth, std::span<const int> pred, std::optional<int> target) {
  if (truth.size() != pred.size()) throw ShapeError("attack_success: length mismatch");
  AttackSuccess r;
  r.target = target;
  r.samples = truth.size();
  std::size_t wrong = 0, eligible = 0, hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    wrong += pred[i] != truth[i];
    if (target && truth[i] != *target) {
      ++eligible;
      hit += pred[i] == *target;
    }
  }
  r.untargeted = truth.empty() ? 0.0 : static_cast<double>(wrong) / static_cast<double>(truth.size());
  r.targeted = eligible == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(eligible);
  return r;
}

// `transformed` holds the triggered/masked inputs with their original labels.
template <std::floating_point T>
AttackSuccess attack_success_rate(const Network<T>& net, const TensorSet<T>& transformed, std::optional<int> target) {
  const auto pred = predict_all(net, transformed);
  return attack_success(transformed.labels, pred, target);
}

template <std::floating_point T>
AttackSuccess attack_success_rate(const Network<T>& net, const TensorSet<T>& clean, const TrojanMask& mask,
                                  std::optional<int> target) {
  const auto pred = predict_all(net, clean, mask);
  return attack_success(clean.labels, pred, target);
}

struct EvalResult {
  std::string dataset_id;
  double accuracy = 0;
  std::optional<AttackSuccess> asr;
  std::vector<double> precision;
  std::vector<double> recall;
  ConfusionMatrix confusion;
};

template <std::floating_point T>
EvalResult evaluate(const Network<T>& net, const TensorSet<T>& data, std::string id) {
  const auto pred = predict_all(net, data);
  EvalResult r;
  r.dataset_id = std::move(id);
  r.confusion = tjlab::confusion(data.labels, pred, net.label_count());
  r.accuracy = r.confusion.accuracy();
  for (int c = 0; c < net.label_count(); ++c) {
    r.precision.push_back(r.confusion.precision(c));
    r.recall.push_back(r.confusion.recall(c));
  }
  return r;
}

}  // namespace tjlab
