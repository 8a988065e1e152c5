#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tjlab/error.hpp"
#include "tjlab/mask.hpp"
#include "tjlab/metrics.hpp"
#include "tjlab/network.hpp"
#include "tjlab/rng.hpp"
#include "tjlab/scan.hpp"
#include "tjlab/tensor_set.hpp"
#include "tjlab/train.hpp"

namespace tjlab {

// Which masked test images count as "belonging to" a selected class.
enum class ClassMembership : std::uint8_t { predicted, true_label };

enum class StopReason : std::uint8_t { clean, delta_exceeded, max_iterations, diverged };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::clean: return "clean";
    case StopReason::delta_exceeded: return "delta_exceeded";
    case StopReason::max_iterations: return "max_iterations";
    case StopReason::diverged: return "diverged";
  }
  return "?";
}

struct MitigationConfig {
  int top_p = 4;
  double delta = 8.0;  // maximum tolerated accuracy drop, percentage points
  int max_iterations = 5;
  TrainConfig retrain{.epochs = 5, .batch_size = 32, .learning_rate = 0.01, .momentum = 0.9};
  double retrain_valid_fraction = 0.2;
  ClassMembership membership = ClassMembership::predicted;
  ScanConfig scan{};
  std::uint64_t seed = 1;

  void validate(int label_count) const {
    if (top_p < 1 || top_p > label_count) {
      throw Error("mitigate: top_p must be in [1, " + std::to_string(label_count) + "], got " + std::to_string(top_p));
    }
    if (!(delta > 0)) throw Error("mitigate: delta must be > 0");
    if (max_iterations < 1) throw Error("mitigate: max_iterations must be >= 1");
    if (!(retrain_valid_fraction >= 0 && retrain_valid_fraction < 1)) {
      throw Error("mitigate: retrain_valid_fraction must be in [0, 1)");
    }
    scan.validate();
  }
};

struct MaskedConfusion {
  ConfusionMatrix matrix;
  std::vector<std::size_t> false_positives;
  std::vector<int> predictions;
};

template <std::floating_point T>
MaskedConfusion masked_confusion(const Network<T>& net, const TrojanMask& mask, const TensorSet<T>& test) {
  if (test.empty()) throw Error("masked_confusion: empty test set");
  MaskedConfusion r;
  r.predictions = predict_all(net, test, mask);
  r.matrix = confusion(test.labels, r.predictions, net.label_count());
  r.false_positives = r.matrix.false_positives();
  return r;
}

// The top_p classes by false-positive count, ties to the lower class index.
inline std::vector<int> select_top_classes(std::span<const std::size_t> false_positives, int top_p) {
  std::vector<int> idx(false_positives.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return false_positives[static_cast<std::size_t>(a)] > false_positives[static_cast<std::size_t>(b)];
  });
  idx.resize(std::min(idx.size(), static_cast<std::size_t>(std::max(0, top_p))));
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct MaskContribution {
  std::vector<std::size_t> false_positives;
  std::vector<int> selected_classes;
  std::size_t added = 0;
};

template <std::floating_point T>
struct Augmentation {
  TensorSet<T> combined;              // X_new before shuffling: masked false positives, then the benign test set
  std::vector<std::size_t> source;    // test-set index each row of `combined` came from
  std::vector<std::uint8_t> masked;   // 1 for rows produced by a mask
  std::vector<MaskContribution> per_mask;
  TensorSet<T> train;
  TensorSet<T> valid;

  std::size_t masked_count() const {
    std::size_t n = 0;
    for (auto m : masked) n += m;
    return n;
  }
};

template <std::floating_point T>
Augmentation<T> build_augmentation(const Network<T>& net, std::span<const TrojanMask> masks, const TensorSet<T>& test,
                                   int top_p, std::uint64_t seed, double valid_fraction = 0.2,
                                   ClassMembership membership = ClassMembership::predicted) {
  if (top_p < 1 || top_p > net.label_count()) throw Error("build_augmentation: top_p out of range");
  Augmentation<T> aug;
  aug.combined.shape = test.shape;
  std::vector<T> buf(test.shape.size());
  for (const auto& mask : masks) {
    const auto mc = masked_confusion(net, mask, test);
    MaskContribution contrib;
    contrib.false_positives = mc.false_positives;
    contrib.selected_classes = select_top_classes(mc.false_positives, top_p);
    std::vector<std::uint8_t> chosen(static_cast<std::size_t>(net.label_count()), 0);
    for (int c : contrib.selected_classes) chosen[static_cast<std::size_t>(c)] = 1;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const int pred = mc.predictions[i];
      const int truth = test.labels[i];
      if (pred == truth) continue;
      const int member = membership == ClassMembership::predicted ? pred : truth;
      if (!chosen[static_cast<std::size_t>(member)]) continue;
      apply_mask<T>(test.sample(i), mask, std::span<T>(buf));
      aug.combined.push_back(buf, truth);
      aug.source.push_back(i);
      aug.masked.push_back(1);
      ++contrib.added;
    }
    aug.per_mask.push_back(std::move(contrib));
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    aug.combined.push_back(test.sample(i), test.labels[i]);
    aug.source.push_back(i);
    aug.masked.push_back(0);
  }
  Rng rng(seed);
  const auto order = permutation(aug.combined.size(), rng);
  const auto n_valid = static_cast<std::size_t>(std::floor(valid_fraction * static_cast<double>(order.size())));
  std::vector<std::size_t> vi(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::vector<std::size_t> ti(order.begin() + static_cast<std::ptrdiff_t>(n_valid), order.end());
  aug.train = aug.combined.subset(ti);
  aug.valid = aug.combined.subset(vi);
  return aug;
}

struct IterationRecord {
  int iteration = 0;
  std::size_t masks_consumed = 0;
  std::vector<MaskContribution> per_mask;
  std::size_t new_samples = 0;     // |X_new| including the benign test set
  std::size_t masked_samples = 0;  // rows of X_new produced by masks
  double valid_accuracy = 0;
  double accuracy_drop = 0;  // percentage points below the original model
  std::size_t candidates_after = 0;
  std::size_t masks_after = 0;
  double max_reasr_after = 0;
  std::optional<double> probe_asr;  // caller-supplied measurement, e.g. planted-trigger ASR
};

struct MitigationReport {
  int top_p = 0;
  double delta = 0;
  double original_valid_accuracy = 0;
  std::size_t initial_masks = 0;
  std::vector<IterationRecord> iterations;
  StopReason stop_reason = StopReason::clean;
  std::string note;
};

template <std::floating_point T>
struct MitigationResult {
  Network<T> model;
  MitigationReport report;
  std::vector<TrojanMask> remaining_masks;
};

// Strategic retraining: augment with masked false positives from the top_p
// classes plus the benign test set, retrain from the current weights, rescan,
// and repeat until the scan is clean, the validation drop exceeds delta, or
// max_iterations is reached. The clean check runs before the drop check.
template <std::floating_point T>
MitigationResult<T> mitigate(const Network<T>& model, std::vector<TrojanMask> masks, const TensorSet<T>& test,
                             const TensorSet<T>& valid, const TensorSet<T>& seeds, const MitigationConfig& cfg,
                             const std::function<double(const Network<T>&)>& probe = {}) {
  cfg.validate(model.label_count());
  if (valid.empty()) throw Error("mitigate: empty validation set");
  MitigationResult<T> res{model, {}, masks};
  auto& rep = res.report;
  rep.top_p = cfg.top_p;
  rep.delta = cfg.delta;
  rep.original_valid_accuracy = accuracy(model, valid);
  rep.initial_masks = masks.size();
  if (masks.empty()) {
    rep.stop_reason = StopReason::clean;
    return res;
  }
  Network<T> current = model;
  for (int it = 1;; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    rec.masks_consumed = masks.size();
    const auto aug = build_augmentation(current, masks, test, cfg.top_p, derive_seed(cfg.seed, "split" + std::to_string(it)),
                                        cfg.retrain_valid_fraction, cfg.membership);
    rec.per_mask = aug.per_mask;
    rec.new_samples = aug.combined.size();
    rec.masked_samples = aug.masked_count();
    TrainConfig tc = cfg.retrain;
    tc.seed = derive_seed(cfg.seed, "retrain" + std::to_string(it));
    try {
      current = train(std::move(current), aug.train, &aug.valid, tc).model;
    } catch (const DivergenceError& e) {
      rep.stop_reason = StopReason::diverged;
      rep.note = e.what();
      res.model = std::move(current);
      return res;
    }
    rec.valid_accuracy = accuracy(current, valid);
    rec.accuracy_drop = 100.0 * (rep.original_valid_accuracy - rec.valid_accuracy);
    ScanConfig sc = cfg.scan;
    sc.seed = derive_seed(cfg.scan.seed, "rescan" + std::to_string(it));
    const auto rescan = scan(current, seeds, sc);
    rec.candidates_after = rescan.candidates.size();
    rec.masks_after = rescan.masks.size();
    for (const auto& m : rescan.masks) rec.max_reasr_after = std::max(rec.max_reasr_after, m.reasr);
    if (probe) rec.probe_asr = probe(current);
    rep.iterations.push_back(std::move(rec));
    masks = rescan.masks;
    if (masks.empty()) {
      rep.stop_reason = StopReason::clean;
      break;
    }
    if (rep.iterations.back().accuracy_drop > cfg.delta) {
      rep.stop_reason = StopReason::delta_exceeded;
      break;
    }
    if (it >= cfg.max_iterations) {
      rep.stop_reason = StopReason::max_iterations;
      break;
    }
  }
  res.model = std::move(current);
  res.remaining_masks = std::move(masks);
  return res;
}

// Scales the incoming weights and bias of each flagged unit by (1 - rate).
template <std::floating_point T>
Network<T> prune(Network<T> net, std::span<const NeuronRef> neurons, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error("prune: rate must be in [0, 1]");
  for (const auto& n : neurons) {
    if (!net.is_hidden_unit(n)) throw ShapeError("prune: " + to_string(n) + " is not a hidden unit");
  }
  if (rate == 0.0) return net;
  const T keep = static_cast<T>(1.0 - rate);
  for (const auto& n : neurons) {
    auto& block = net.params()[n.layer];
    const std::size_t fan_in = block.weights.size() / block.bias.size();
    const auto first = block.weights.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(n.unit) * fan_in);
    std::for_each(first, first + static_cast<std::ptrdiff_t>(fan_in), [&](T& w) { w *= keep; });
    block.bias[static_cast<std::size_t>(n.unit)] *= keep;
  }
  return net;
}

struct UnlearnConfig {
  double train_subset_fraction = 0.10;
  double replace_fraction = 0.20;
  TrainConfig train{.epochs = 1, .batch_size = 32, .learning_rate = 0.01, .momentum = 0.9};
  std::uint64_t seed = 1;
};

// Neural-Cleanse-style comparison arm: fine-tune on a small benign subset in
// which a share of the images is replaced by masked copies that keep their
// true labels. Masks are used round-robin over the replaced images.
template <std::floating_point T>
Network<T> unlearn_baseline(const Network<T>& model, std::span<const TrojanMask> masks, const TensorSet<T>& benign_train,
                            const UnlearnConfig& cfg) {
  if (!(cfg.train_subset_fraction > 0 && cfg.train_subset_fraction <= 1)) {
    throw Error("unlearn: train_subset_fraction must be in (0, 1]");
  }
  if (!(cfg.replace_fraction >= 0 && cfg.replace_fraction < 1)) throw Error("unlearn: replace_fraction must be in [0, 1)");
  Rng rng(derive_seed(cfg.seed, "unlearn"));
  const auto n = static_cast<std::size_t>(std::llround(cfg.train_subset_fraction * static_cast<double>(benign_train.size())));
  if (n == 0) throw Error("unlearn: subset is empty");
  auto order = permutation(benign_train.size(), rng);
  order.resize(n);
  auto subset = benign_train.subset(order);
  if (!masks.empty()) {
    const auto n_replace = static_cast<std::size_t>(std::llround(cfg.replace_fraction * static_cast<double>(n)));
    const auto pick = permutation(n, rng);
    for (std::size_t k = 0; k < n_replace; ++k) {
      auto x = subset.sample(pick[k]);
      const auto masked = apply_mask<T>(std::span<const T>(x.data(), x.size()), masks[k % masks.size()]);
      std::copy(masked.begin(), masked.end(), x.begin());
    }
  }
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "unlearn-train");
  return train<T>(model, subset, nullptr, tc).model;
}

}  // namespace tjlab
