#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tjlab/checkpoint.hpp"
#include "tjlab/config.hpp"
#include "tjlab/dataset.hpp"
#include "tjlab/mask.hpp"
#include "tjlab/metrics.hpp"
#include "tjlab/mitigate.hpp"
#include "tjlab/network.hpp"
#include "tjlab/poison.hpp"
#include "tjlab/report.hpp"
#include "tjlab/scan.hpp"
#include "tjlab/synth.hpp"
#include "tjlab/train.hpp"

namespace tjlab {

// Four strided 5x5 conv layers, global average pooling, linear head.
inline std::vector<LayerSpec> desk_architecture(int classes) {
  return {LayerSpec::conv(8, 5, 2),  LayerSpec::conv(16, 5, 2), LayerSpec::conv(32, 5, 2),
          LayerSpec::conv(16, 5, 2), LayerSpec::global_avg_pool(), LayerSpec::dense(classes)};
}

inline std::uint64_t stage_seed(const RunConfig& c, std::string_view stage) { return derive_seed(c.seed, stage); }

inline SynthConfig synth_config(const RunConfig& c) {
  SynthConfig s = c.data;
  s.seed = stage_seed(c, "data");
  return s;
}

inline ScanConfig scan_config(const RunConfig& c) {
  ScanConfig s = c.scan;
  s.seed = stage_seed(c, "scan");
  return s;
}

inline MitigationConfig mitigation_config(const RunConfig& c, int top_p) {
  MitigationConfig m = c.mitigate;
  m.top_p = top_p;
  m.scan = scan_config(c);
  m.seed = stage_seed(c, "mitigate");
  return m;
}

inline UnlearnConfig unlearn_config(const RunConfig& c) {
  UnlearnConfig u = c.unlearn;
  u.seed = stage_seed(c, "unlearn");
  return u;
}

inline Network<float> initial_network(const RunConfig& c) {
  Network<float> net(c.data.geometry.tensor_shape(), desk_architecture(c.data.class_count));
  net.init_he(stage_seed(c, "init"));
  return net;
}

inline TrainConfig train_config(const RunConfig& c, std::string_view model) {
  TrainConfig t = c.train;
  t.seed = stage_seed(c, std::string("train:") + std::string(model));
  return t;
}

inline LabeledDataset poison_train(const RunConfig& c, const LabeledDataset& train) {
  return poison(train, c.trojan, stage_seed(c, "poison"));
}

inline LabeledDataset stamped_test(const RunConfig& c, const LabeledDataset& test) {
  return stamp_all(test, c.trojan, stage_seed(c, "stamp"));
}

using Logger = std::function<void(const std::string&)>;

struct StageTiming {
  std::string stage;
  double seconds = 0;
};

struct Experiment {
  RunConfig config;
  DatasetBundle data;
  LabeledDataset poisoned_train;
  Network<float> benign, trojan, mitigated, unlearned;
  ScanResult benign_scan, trojan_scan;
  ExperimentRecord record;
  std::vector<StageTiming> timings;
};

template <std::floating_point T>
ScanRecord scan_record(const std::string& model, const Network<T>& net, const ScanResult& s, const TensorSet<T>& seeds,
                       const TensorSet<T>& test, const ScanConfig& cfg) {
  ScanRecord r;
  r.model = model;
  r.units_scanned = s.units_scanned;
  r.candidates = s.candidates.size();
  for (std::size_t i = 0; i < s.candidates.size(); ++i) {
    r.sound_candidates += verify_candidate(net, s.candidates[i], seeds, s.candidate_grids[i], cfg.reasr_bound);
  }
  for (const auto& m : s.reverse_engineered) {
    MaskRecord mr;
    mr.neuron = m.source.neuron;
    mr.elevated_label = m.source.elevated_label;
    mr.z_lo = m.source.z_lo;
    mr.z_hi = m.source.z_hi;
    mr.reasr = m.reasr;
    mr.alpha_l1 = m.alpha_l1();
    mr.test = attack_success_rate(net, test, m, m.source.elevated_label);
    mr.kept = m.reasr >= cfg.reasr_bound;
    r.masks.push_back(mr);
  }
  return r;
}

inline Experiment run_experiment(const RunConfig& cfg, const Logger& log = {}) {
  cfg.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  using clock = std::chrono::steady_clock;
  Experiment ex;
  ex.config = cfg;
  auto timed = [&](const std::string& stage, auto&& fn) {
    say(stage);
    const auto t0 = clock::now();
    fn();
    ex.timings.push_back({stage, std::chrono::duration<double>(clock::now() - t0).count()});
  };
  auto& rec = ex.record;
  rec.config = to_json(cfg);
  rec.config_hash = config_hash(cfg);
  rec.target_class = cfg.trojan.target_class;
  const int target = cfg.trojan.target_class;

  timed("gen-data", [&] { ex.data = generate(synth_config(cfg)); });
  timed("poison", [&] { ex.poisoned_train = poison_train(cfg, ex.data.train); });
  const auto train_b = to_tensors<float>(ex.data.train);
  const auto train_p = to_tensors<float>(ex.poisoned_train);
  const auto valid = to_tensors<float>(ex.data.valid);
  const auto test = to_tensors<float>(ex.data.test);
  const auto seeds = to_tensors<float>(ex.data.seed);
  const auto stamped = to_tensors<float>(stamped_test(cfg, ex.data.test));
  auto planted = [&](const Network<float>& n) { return attack_success_rate(n, stamped, target); };

  timed("train benign", [&] { ex.benign = train(initial_network(cfg), train_b, &valid, train_config(cfg, "benign")).model; });
  timed("train trojan", [&] { ex.trojan = train(initial_network(cfg), train_p, &valid, train_config(cfg, "trojan")).model; });
  rec.models.push_back({"benign", accuracy(ex.benign, train_b), accuracy(ex.benign, valid), accuracy(ex.benign, test),
                        planted(ex.benign)});
  rec.models.push_back({"trojan", accuracy(ex.trojan, train_p), accuracy(ex.trojan, valid), accuracy(ex.trojan, test),
                        planted(ex.trojan)});

  const auto sc = scan_config(cfg);
  timed("scan benign", [&] { ex.benign_scan = scan(ex.benign, seeds, sc); });
  timed("scan trojan", [&] { ex.trojan_scan = scan(ex.trojan, seeds, sc); });
  rec.scans.push_back(scan_record("benign", ex.benign, ex.benign_scan, seeds, test, sc));
  rec.scans.push_back(scan_record("trojan", ex.trojan, ex.trojan_scan, seeds, test, sc));
  for (auto* s : {&ex.benign_scan, &ex.trojan_scan}) {
    const auto& net = s == &ex.benign_scan ? ex.benign : ex.trojan;
    for (auto& m : s->masks) m.asr_test = attack_success_rate(net, test, m, m.source.elevated_label).targeted;
  }

  std::vector<int> sweep = cfg.top_p_sweep;
  if (std::find(sweep.begin(), sweep.end(), cfg.mitigate.top_p) == sweep.end()) sweep.push_back(cfg.mitigate.top_p);
  std::sort(sweep.begin(), sweep.end());
  const std::function<double(const Network<float>&)> probe = [&](const Network<float>& n) { return planted(n).targeted; };
  auto mitigate_one = [&](const std::string& name, const Network<float>& model, const ScanResult& s, int p) {
    MitigationResult<float> res{model, {}, {}};
    timed("mitigate " + name + " top_p=" + std::to_string(p), [&] {
      res = mitigate<float>(model, s.masks, test, valid, seeds, mitigation_config(cfg, p), probe);
    });
    rec.mitigations.push_back({name, p, res.report, accuracy(res.model, test), planted(res.model)});
    return res.model;
  };
  mitigate_one("benign", ex.benign, ex.benign_scan, cfg.mitigate.top_p);
  for (int p : sweep) {
    auto m = mitigate_one("trojan", ex.trojan, ex.trojan_scan, p);
    if (p == cfg.mitigate.top_p) ex.mitigated = std::move(m);
  }

  for (const auto& m : ex.trojan_scan.masks) {
    if (std::find(rec.pruned_neurons.begin(), rec.pruned_neurons.end(), m.source.neuron) == rec.pruned_neurons.end()) {
      rec.pruned_neurons.push_back(m.source.neuron);
    }
  }
  timed("prune", [&] {
    for (double rate : cfg.prune_rates) {
      const auto pruned = prune(ex.trojan, std::span<const NeuronRef>(rec.pruned_neurons), rate);
      rec.pruning.push_back({rate, accuracy(pruned, test), planted(pruned)});
    }
  });

  timed("unlearn", [&] {
    ex.unlearned = unlearn_baseline(ex.trojan, std::span<const TrojanMask>(ex.trojan_scan.masks), train_b, unlearn_config(cfg));
  });
  rec.comparison.push_back({"original", accuracy(ex.trojan, test), planted(ex.trojan)});
  rec.comparison.push_back({"retraining top_p=" + std::to_string(cfg.mitigate.top_p), accuracy(ex.mitigated, test),
                            planted(ex.mitigated)});
  rec.comparison.push_back({"unlearning", accuracy(ex.unlearned, test), planted(ex.unlearned)});
  if (!rec.pruning.empty()) {
    const auto strongest = std::max_element(rec.pruning.begin(), rec.pruning.end(),
                                            [](const PruneRecord& a, const PruneRecord& b) { return a.rate < b.rate; });
    rec.comparison.push_back({"pruning rate=" + report_detail::fixed(strongest->rate, 2), strongest->test_accuracy,
                              strongest->planted});
  }
  return ex;
}

struct BundlePaths {
  std::filesystem::path report_json, report_text, config;
};

inline BundlePaths bundle_paths(const std::filesystem::path& dir, const std::string& hash) {
  return {dir / ("report-" + hash + ".json"), dir / ("report-" + hash + ".txt"), dir / ("config-" + hash + ".json")};
}

// The report bundle (JSON, text, config) is deterministic. Model artifacts go
// next to it; wall-clock timings go to a separate file outside the bundle.
inline BundlePaths write_experiment(const Experiment& ex, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto paths = bundle_paths(dir, ex.record.config_hash);
  io::write_text(paths.report_json.string(), report_json(ex.record).dump(2) + "\n");
  io::write_text(paths.report_text.string(), report_text(ex.record));
  io::write_text(paths.config.string(), dump_config(ex.config));
  save_checkpoint(ex.benign, (dir / "benign.tjf").string());
  save_checkpoint(ex.trojan, (dir / "trojan.tjf").string());
  save_checkpoint(ex.mitigated, (dir / "mitigated.tjf").string());
  save_checkpoint(ex.unlearned, (dir / "unlearned.tjf").string());
  save_masks(std::span<const TrojanMask>(ex.trojan_scan.masks), (dir / "trojan.tjm").string());
  save_masks(std::span<const TrojanMask>(ex.benign_scan.masks), (dir / "benign.tjm").string());
  nlohmann::json t = nlohmann::json::array();
  for (const auto& s : ex.timings) t.push_back({{"stage", s.stage}, {"seconds", s.seconds}});
  io::write_text((dir / ("timings-" + ex.record.config_hash + ".json")).string(), t.dump(2) + "\n");
  return paths;
}

}  // namespace tjlab
