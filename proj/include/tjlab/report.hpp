#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tjlab/metrics.hpp"
#include "tjlab/mitigate.hpp"
#include "tjlab/scan.hpp"

namespace tjlab {

struct ModelRecord {
  std::string name;
  double train_accuracy = 0;
  double valid_accuracy = 0;
  double test_accuracy = 0;
  AttackSuccess planted{};  // planted trigger stamped on the test split
};

struct MaskRecord {
  NeuronRef neuron;
  int elevated_label = 0;
  double z_lo = 0, z_hi = 0;
  double reasr = 0;
  double alpha_l1 = 0;
  AttackSuccess test{};  // mask on the test split, target = elevated label
  bool kept = false;     // survived the REASR bound
};

struct ScanRecord {
  std::string model;
  std::size_t units_scanned = 0;
  std::size_t candidates = 0;
  std::size_t sound_candidates = 0;
  std::vector<MaskRecord> masks;  // one per candidate

  std::size_t kept() const {
    return static_cast<std::size_t>(std::count_if(masks.begin(), masks.end(), [](const MaskRecord& m) { return m.kept; }));
  }
};

struct MitigationRecord {
  std::string model;
  int top_p = 0;
  MitigationReport report;
  double test_accuracy = 0;
  AttackSuccess planted{};
};

struct PruneRecord {
  double rate = 0;
  double test_accuracy = 0;
  AttackSuccess planted{};
};

struct ArmRecord {
  std::string name;
  double test_accuracy = 0;
  AttackSuccess planted{};
};

struct ExperimentRecord {
  std::string config_hash;
  nlohmann::json config = nlohmann::json::object();
  int target_class = 0;
  std::vector<ModelRecord> models;
  std::vector<ScanRecord> scans;
  std::vector<MitigationRecord> mitigations;
  std::vector<NeuronRef> pruned_neurons;
  std::vector<PruneRecord> pruning;
  std::vector<ArmRecord> comparison;  // original, retraining, unlearning, strongest pruning
};

namespace report_detail {

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
inline std::string pct(double v) { return fixed(100.0 * v, 2); }

// Left-aligned first column, right-aligned rest.
class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header) : rows_{std::move(header)} {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  std::size_t body_rows() const { return rows_.size() - 1; }

  std::string render() const {
    std::vector<std::size_t> w;
    for (const auto& r : rows_) {
      if (w.size() < r.size()) w.resize(r.size(), 0);
      for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
    }
    std::string out;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const std::string cell = i < r.size() ? r[i] : "";
        const std::string pad(w[i] - cell.size(), ' ');
        out += i == 0 ? cell + pad : "  " + pad + cell;
      }
      while (!out.empty() && out.back() == ' ') out.pop_back();
      out += '\n';
    };
    line(rows_[0]);
    std::size_t total = 0;
    for (auto x : w) total += x;
    out += std::string(total + 2 * (w.empty() ? 0 : w.size() - 1), '-') + '\n';
    for (std::size_t r = 1; r < rows_.size(); ++r) line(rows_[r]);
    return out;
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

inline nlohmann::json asr_json(const AttackSuccess& a) {
  nlohmann::json j{{"targeted", a.targeted}, {"untargeted", a.untargeted}, {"samples", a.samples}};
  j["target"] = a.target ? nlohmann::json(*a.target) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json neuron_json(const NeuronRef& n) { return {{"layer", n.layer}, {"unit", n.unit}}; }

}  // namespace report_detail

inline nlohmann::json report_json(const ExperimentRecord& r) {
  using namespace report_detail;
  using nlohmann::json;
  json j;
  j["config_hash"] = r.config_hash;
  j["config"] = r.config;
  j["target_class"] = r.target_class;
  j["asr_variants"] = "targeted: non-target samples predicted as the target; untargeted: samples predicted away from their label";
  j["models"] = json::array();
  for (const auto& m : r.models) {
    j["models"].push_back({{"name", m.name},
                           {"train_accuracy", m.train_accuracy},
                           {"valid_accuracy", m.valid_accuracy},
                           {"test_accuracy", m.test_accuracy},
                           {"planted_asr", asr_json(m.planted)}});
  }
  j["scans"] = json::array();
  for (const auto& s : r.scans) {
    json masks = json::array();
    for (const auto& m : s.masks) {
      masks.push_back({{"neuron", neuron_json(m.neuron)},
                       {"elevated_label", m.elevated_label},
                       {"z_lo", m.z_lo},
                       {"z_hi", m.z_hi},
                       {"reasr", m.reasr},
                       {"alpha_l1", m.alpha_l1},
                       {"test_asr", asr_json(m.test)},
                       {"kept", m.kept}});
    }
    j["scans"].push_back({{"model", s.model},
                          {"units_scanned", s.units_scanned},
                          {"candidates", s.candidates},
                          {"sound_candidates", s.sound_candidates},
                          {"masks_kept", s.kept()},
                          {"masks", masks}});
  }
  j["mitigations"] = json::array();
  for (const auto& m : r.mitigations) {
    json its = json::array();
    for (const auto& it : m.report.iterations) {
      json per_mask = json::array();
      for (const auto& pm : it.per_mask) {
        per_mask.push_back({{"false_positives", pm.false_positives}, {"selected_classes", pm.selected_classes}, {"added", pm.added}});
      }
      its.push_back({{"iteration", it.iteration},
                     {"masks_consumed", it.masks_consumed},
                     {"per_mask", per_mask},
                     {"new_samples", it.new_samples},
                     {"masked_samples", it.masked_samples},
                     {"valid_accuracy", it.valid_accuracy},
                     {"accuracy_drop", it.accuracy_drop},
                     {"candidates_after", it.candidates_after},
                     {"masks_after", it.masks_after},
                     {"max_reasr_after", it.max_reasr_after},
                     {"planted_asr", it.probe_asr ? json(*it.probe_asr) : json(nullptr)}});
    }
    j["mitigations"].push_back({{"model", m.model},
                                {"top_p", m.top_p},
                                {"delta", m.report.delta},
                                {"original_valid_accuracy", m.report.original_valid_accuracy},
                                {"initial_masks", m.report.initial_masks},
                                {"stop_reason", to_string(m.report.stop_reason)},
                                {"note", m.report.note},
                                {"iterations", its},
                                {"test_accuracy", m.test_accuracy},
                                {"planted_asr", asr_json(m.planted)}});
  }
  j["pruned_neurons"] = json::array();
  for (const auto& n : r.pruned_neurons) j["pruned_neurons"].push_back(neuron_json(n));
  j["pruning"] = json::array();
  for (const auto& p : r.pruning) {
    j["pruning"].push_back({{"rate", p.rate}, {"test_accuracy", p.test_accuracy}, {"planted_asr", asr_json(p.planted)}});
  }
  j["comparison"] = json::array();
  for (const auto& a : r.comparison) {
    j["comparison"].push_back({{"arm", a.name}, {"test_accuracy", a.test_accuracy}, {"planted_asr", asr_json(a.planted)}});
  }
  return j;
}

inline std::string report_text(const ExperimentRecord& r) {
  using namespace report_detail;
  std::string out;
  out += "config " + r.config_hash + ", planted target class " + std::to_string(r.target_class) + "\n";
  out += "ASR columns are targeted unless marked (untgt).\n\n";

  out += "Model accuracy (%)\n";
  TextTable acc({"model", "train", "valid", "test", "planted ASR", "planted ASR (untgt)"});
  for (const auto& m : r.models) {
    acc.add({m.name, pct(m.train_accuracy), pct(m.valid_accuracy), pct(m.test_accuracy), pct(m.planted.targeted),
             pct(m.planted.untargeted)});
  }
  out += acc.render() + "\n";

  out += "Compromised units\n";
  TextTable sc({"model", "units", "candidates", "sound", "masks kept", "best kept mask ASR"});
  for (const auto& s : r.scans) {
    double best = 0;
    for (const auto& m : s.masks) {
      if (m.kept) best = std::max(best, m.test.targeted);
    }
    sc.add({s.model, std::to_string(s.units_scanned), std::to_string(s.candidates), std::to_string(s.sound_candidates),
            std::to_string(s.kept()), s.kept() ? pct(best) : "-"});
  }
  out += sc.render() + "\n";

  for (const auto& s : r.scans) {
    out += "Masks, " + s.model + "\n";
    TextTable mt({"unit", "label", "z_lo", "z_hi", "REASR", "alpha L1", "test ASR", "test ASR (untgt)", "kept"});
    for (const auto& m : s.masks) {
      mt.add({to_string(m.neuron), std::to_string(m.elevated_label), fixed(m.z_lo, 3), fixed(m.z_hi, 3), fixed(m.reasr, 2),
              fixed(m.alpha_l1, 2), pct(m.test.targeted), pct(m.test.untargeted), m.kept ? "yes" : "no"});
    }
    out += mt.render() + "\n";
  }

  if (!r.mitigations.empty()) {
    out += "Retraining by top_p\n";
    std::vector<std::string> head{"metric"};
    for (const auto& m : r.mitigations) head.push_back(m.model + " p=" + std::to_string(m.top_p));
    TextTable tp(std::move(head));
    auto row = [&](const std::string& name, auto get) {
      std::vector<std::string> cells{name};
      for (const auto& m : r.mitigations) cells.push_back(get(m));
      tp.add(std::move(cells));
    };
    row("test accuracy", [](const MitigationRecord& m) { return pct(m.test_accuracy); });
    row("planted ASR", [](const MitigationRecord& m) { return pct(m.planted.targeted); });
    row("valid drop (pts)", [](const MitigationRecord& m) {
      return m.report.iterations.empty() ? fixed(0.0, 2) : fixed(m.report.iterations.back().accuracy_drop, 2);
    });
    row("iterations", [](const MitigationRecord& m) { return std::to_string(m.report.iterations.size()); });
    row("stop", [](const MitigationRecord& m) { return std::string(to_string(m.report.stop_reason)); });
    out += tp.render() + "\n";

    for (const auto& m : r.mitigations) {
      out += "Iterations, " + m.model + " top_p=" + std::to_string(m.top_p) + "\n";
      TextTable it({"iter", "masks in", "|X_new|", "masked", "valid acc", "drop", "candidates", "masks after", "planted ASR"});
      for (const auto& x : m.report.iterations) {
        it.add({std::to_string(x.iteration), std::to_string(x.masks_consumed), std::to_string(x.new_samples),
                std::to_string(x.masked_samples), pct(x.valid_accuracy), fixed(x.accuracy_drop, 2),
                std::to_string(x.candidates_after), std::to_string(x.masks_after), x.probe_asr ? pct(*x.probe_asr) : "-"});
      }
      out += it.render() + "\n";
    }
  }

  if (!r.pruning.empty()) {
    std::string units;
    for (const auto& n : r.pruned_neurons) units += (units.empty() ? "" : " ") + to_string(n);
    out += "Pruning flagged units [" + units + "]\n";
    TextTable pt({"rate", "test accuracy", "planted ASR"});
    for (const auto& p : r.pruning) pt.add({fixed(p.rate, 2), pct(p.test_accuracy), pct(p.planted.targeted)});
    out += pt.render() + "\n";
  }

  if (!r.comparison.empty()) {
    out += "Defense comparison\n";
    TextTable ct({"arm", "test accuracy", "planted ASR"});
    for (const auto& a : r.comparison) ct.add({a.name, pct(a.test_accuracy), pct(a.planted.targeted)});
    out += ct.render();
  }
  return out;
}

namespace report_detail {

inline AttackSuccess asr_from_json(const nlohmann::json& j) {
  AttackSuccess a;
  a.targeted = j.at("targeted").get<double>();
  a.untargeted = j.at("untargeted").get<double>();
  a.samples = j.at("samples").get<std::size_t>();
  if (!j.at("target").is_null()) a.target = j.at("target").get<int>();
  return a;
}

inline NeuronRef neuron_from_json(const nlohmann::json& j) {
  return {j.at("layer").get<std::size_t>(), j.at("unit").get<int>()};
}

inline StopReason stop_from_string(const std::string& s) {
  for (auto r : {StopReason::clean, StopReason::delta_exceeded, StopReason::max_iterations, StopReason::diverged}) {
    if (s == to_string(r)) return r;
  }
  throw FormatError("report: unknown stop_reason '" + s + "'");
}

}  // namespace report_detail

// Inverse of report_json.
inline ExperimentRecord record_from_json(const nlohmann::json& j) {
  using namespace report_detail;
  ExperimentRecord r;
  try {
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config = j.at("config");
    r.target_class = j.at("target_class").get<int>();
    for (const auto& m : j.at("models")) {
      r.models.push_back({m.at("name").get<std::string>(), m.at("train_accuracy").get<double>(),
                          m.at("valid_accuracy").get<double>(), m.at("test_accuracy").get<double>(),
                          asr_from_json(m.at("planted_asr"))});
    }
    for (const auto& s : j.at("scans")) {
      ScanRecord sr;
      sr.model = s.at("model").get<std::string>();
      sr.units_scanned = s.at("units_scanned").get<std::size_t>();
      sr.candidates = s.at("candidates").get<std::size_t>();
      sr.sound_candidates = s.at("sound_candidates").get<std::size_t>();
      for (const auto& m : s.at("masks")) {
        MaskRecord mr;
        mr.neuron = neuron_from_json(m.at("neuron"));
        mr.elevated_label = m.at("elevated_label").get<int>();
        mr.z_lo = m.at("z_lo").get<double>();
        mr.z_hi = m.at("z_hi").get<double>();
        mr.reasr = m.at("reasr").get<double>();
        mr.alpha_l1 = m.at("alpha_l1").get<double>();
        mr.test = asr_from_json(m.at("test_asr"));
        mr.kept = m.at("kept").get<bool>();
        sr.masks.push_back(mr);
      }
      r.scans.push_back(std::move(sr));
    }
    for (const auto& m : j.at("mitigations")) {
      MitigationRecord mr;
      mr.model = m.at("model").get<std::string>();
      mr.top_p = m.at("top_p").get<int>();
      mr.report.top_p = mr.top_p;
      mr.report.delta = m.at("delta").get<double>();
      mr.report.original_valid_accuracy = m.at("original_valid_accuracy").get<double>();
      mr.report.initial_masks = m.at("initial_masks").get<std::size_t>();
      mr.report.stop_reason = stop_from_string(m.at("stop_reason").get<std::string>());
      mr.report.note = m.at("note").get<std::string>();
      for (const auto& it : m.at("iterations")) {
        IterationRecord ir;
        ir.iteration = it.at("iteration").get<int>();
        ir.masks_consumed = it.at("masks_consumed").get<std::size_t>();
        for (const auto& pm : it.at("per_mask")) {
          ir.per_mask.push_back({pm.at("false_positives").get<std::vector<std::size_t>>(),
                                 pm.at("selected_classes").get<std::vector<int>>(), pm.at("added").get<std::size_t>()});
        }
        ir.new_samples = it.at("new_samples").get<std::size_t>();
        ir.masked_samples = it.at("masked_samples").get<std::size_t>();
        ir.valid_accuracy = it.at("valid_accuracy").get<double>();
        ir.accuracy_drop = it.at("accuracy_drop").get<double>();
        ir.candidates_after = it.at("candidates_after").get<std::size_t>();
        ir.masks_after = it.at("masks_after").get<std::size_t>();
        ir.max_reasr_after = it.at("max_reasr_after").get<double>();
        if (!it.at("planted_asr").is_null()) ir.probe_asr = it.at("planted_asr").get<double>();
        mr.report.iterations.push_back(std::move(ir));
      }
      mr.test_accuracy = m.at("test_accuracy").get<double>();
      mr.planted = asr_from_json(m.at("planted_asr"));
      r.mitigations.push_back(std::move(mr));
    }
    for (const auto& n : j.at("pruned_neurons")) r.pruned_neurons.push_back(neuron_from_json(n));
    for (const auto& p : j.at("pruning")) {
      r.pruning.push_back({p.at("rate").get<double>(), p.at("test_accuracy").get<double>(), asr_from_json(p.at("planted_asr"))});
    }
    for (const auto& a : j.at("comparison")) {
      r.comparison.push_back({a.at("arm").get<std::string>(), a.at("test_accuracy").get<double>(),
                              asr_from_json(a.at("planted_asr"))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return r;
}

}  // namespace tjlab
