#pragma once

#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tjlab/binary_io.hpp"
#include "tjlab/error.hpp"
#include "tjlab/mitigate.hpp"
#include "tjlab/poison.hpp"
#include "tjlab/scan.hpp"
#include "tjlab/synth.hpp"
#include "tjlab/train.hpp"

namespace tjlab {

using json = nlohmann::json;

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Everything a run needs. Stage seeds are not stored: they are derived from
// `seed` by stage name (see derive_seed), so any stage can be rerun alone.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "tjlab-out";
  SynthConfig data{};
  TrojanSpec trojan{.target_class = 0};
  TrainConfig train{.epochs = 12, .batch_size = 32, .learning_rate = 0.02, .momentum = 0.9, .lr_decay = 0.85};
  ScanConfig scan{};
  MitigationConfig mitigate{};
  std::vector<int> top_p_sweep{2, 4, 6, 10};
  std::vector<double> prune_rates{0.0, 0.25, 0.5, 0.75, 1.0};
  UnlearnConfig unlearn{};

  void validate() const {
    if (data.class_count < 2) throw ConfigError("config: data.classes must be >= 2");
    if (data.geometry.height <= 0 || data.geometry.width <= 0 || data.geometry.channels <= 0) {
      throw ConfigError("config: data image dimensions must be positive");
    }
    if (data.sizes.seed < static_cast<std::size_t>(data.class_count)) {
      throw ConfigError("config: data.seed_images must be >= data.classes");
    }
    try {
      trojan.validate(data.geometry, data.class_count);
      scan.validate();
      mitigate.validate(data.class_count);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    if (train.epochs < 1 || train.batch_size < 1) throw ConfigError("config: train.epochs and train.batch_size must be >= 1");
    for (int p : top_p_sweep) {
      if (p < 1 || p > data.class_count) throw ConfigError("config: top_p_sweep entry " + std::to_string(p) + " out of range");
    }
    for (double r : prune_rates) {
      if (!(r >= 0 && r <= 1)) throw ConfigError("config: prune_rates entries must be in [0, 1]");
    }
  }
};

namespace config_detail {

inline void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + std::string(where) + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == k;
    if (!ok) throw ConfigError("config: unknown key '" + std::string(where) + (where.empty() ? "" : ".") + k + "'");
  }
}

template <class V>
void read(const json& j, const char* key, V& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + std::string(where) + (where.empty() ? "" : ".") + key + "': " + e.what());
  }
}

inline json train_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},         {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
          {"momentum", t.momentum},     {"weight_decay", t.weight_decay}, {"lr_decay", t.lr_decay}};
}

inline void train_from_json(const json& j, TrainConfig& t, std::string_view where) {
  check_keys(j, where, {"epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "lr_decay"});
  read(j, "epochs", t.epochs, where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "learning_rate", t.learning_rate, where);
  read(j, "momentum", t.momentum, where);
  read(j, "weight_decay", t.weight_decay, where);
  read(j, "lr_decay", t.lr_decay, where);
}

template <class E>
E parse_enum(const json& j, std::string_view where, std::initializer_list<std::pair<const char*, E>> names) {
  if (!j.is_string()) throw ConfigError("config: '" + std::string(where) + "' must be a string");
  const auto s = j.get<std::string>();
  for (const auto& [n, e] : names) {
    if (s == n) return e;
  }
  throw ConfigError("config: unknown value '" + s + "' for '" + std::string(where) + "'");
}

}  // namespace config_detail

inline json to_json(const RunConfig& c) {
  using namespace config_detail;
  const auto& t = c.trojan;
  const auto& s = c.scan;
  const auto& m = c.mitigate;
  return {
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"data",
       {{"height", c.data.geometry.height},
        {"width", c.data.geometry.width},
        {"channels", c.data.geometry.channels},
        {"classes", c.data.class_count},
        {"train", c.data.sizes.train},
        {"valid", c.data.sizes.valid},
        {"test", c.data.sizes.test},
        {"seed_images", c.data.sizes.seed}}},
      {"trojan",
       {{"color", t.color},
        {"patch_size", t.patch_size},
        {"placement", t.placement == PatchPlacement::fixed ? "fixed" : "random"},
        {"row", t.row},
        {"col", t.col},
        {"jitter", t.jitter},
        {"poison_fraction", t.poison_fraction},
        {"target_class", t.target_class}}},
      {"train", train_to_json(c.train)},
      {"scan",
       {{"grid_size", s.grid_size},
        {"max_multiplier", s.max_multiplier},
        {"min_width", s.min_width},
        {"mask_steps", s.mask_steps},
        {"mask_learning_rate", s.mask_learning_rate},
        {"lambda", s.lambda},
        {"max_mask_fraction", s.max_mask_fraction},
        {"channel_reduce", s.channel_reduce == ChannelReduce::max ? "max" : "mean"},
        {"reasr_bound", s.reasr_bound}}},
      {"mitigate",
       {{"top_p", m.top_p},
        {"delta", m.delta},
        {"max_iterations", m.max_iterations},
        {"retrain", train_to_json(m.retrain)},
        {"retrain_valid_fraction", m.retrain_valid_fraction},
        {"membership", m.membership == ClassMembership::predicted ? "predicted" : "true_label"}}},
      {"top_p_sweep", c.top_p_sweep},
      {"prune_rates", c.prune_rates},
      {"unlearn",
       {{"train_subset_fraction", c.unlearn.train_subset_fraction},
        {"replace_fraction", c.unlearn.replace_fraction},
        {"train", train_to_json(c.unlearn.train)}}},
  };
}

// Missing keys keep their defaults; unknown keys are errors.
inline RunConfig config_from_json(const json& j) {
  using namespace config_detail;
  RunConfig c;
  check_keys(j, "", {"seed", "out_dir", "data", "trojan", "train", "scan", "mitigate", "top_p_sweep", "prune_rates", "unlearn"});
  read(j, "seed", c.seed, "");
  read(j, "out_dir", c.out_dir, "");
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, "data", {"height", "width", "channels", "classes", "train", "valid", "test", "seed_images"});
    read(d, "height", c.data.geometry.height, "data");
    read(d, "width", c.data.geometry.width, "data");
    read(d, "channels", c.data.geometry.channels, "data");
    read(d, "classes", c.data.class_count, "data");
    read(d, "train", c.data.sizes.train, "data");
    read(d, "valid", c.data.sizes.valid, "data");
    read(d, "test", c.data.sizes.test, "data");
    read(d, "seed_images", c.data.sizes.seed, "data");
  }
  if (j.contains("trojan")) {
    const auto& t = j["trojan"];
    check_keys(t, "trojan", {"color", "patch_size", "placement", "row", "col", "jitter", "poison_fraction", "target_class"});
    read(t, "color", c.trojan.color, "trojan");
    read(t, "patch_size", c.trojan.patch_size, "trojan");
    if (t.contains("placement")) {
      c.trojan.placement = parse_enum<PatchPlacement>(t["placement"], "trojan.placement",
                                                      {{"fixed", PatchPlacement::fixed}, {"random", PatchPlacement::random}});
    }
    read(t, "row", c.trojan.row, "trojan");
    read(t, "col", c.trojan.col, "trojan");
    read(t, "jitter", c.trojan.jitter, "trojan");
    read(t, "poison_fraction", c.trojan.poison_fraction, "trojan");
    read(t, "target_class", c.trojan.target_class, "trojan");
  }
  if (j.contains("train")) train_from_json(j["train"], c.train, "train");
  if (j.contains("scan")) {
    const auto& s = j["scan"];
    check_keys(s, "scan", {"grid_size", "max_multiplier", "min_width", "mask_steps", "mask_learning_rate", "lambda",
                           "max_mask_fraction", "channel_reduce", "reasr_bound"});
    read(s, "grid_size", c.scan.grid_size, "scan");
    read(s, "max_multiplier", c.scan.max_multiplier, "scan");
    read(s, "min_width", c.scan.min_width, "scan");
    read(s, "mask_steps", c.scan.mask_steps, "scan");
    read(s, "mask_learning_rate", c.scan.mask_learning_rate, "scan");
    read(s, "lambda", c.scan.lambda, "scan");
    read(s, "max_mask_fraction", c.scan.max_mask_fraction, "scan");
    if (s.contains("channel_reduce")) {
      c.scan.channel_reduce = parse_enum<ChannelReduce>(s["channel_reduce"], "scan.channel_reduce",
                                                        {{"max", ChannelReduce::max}, {"mean", ChannelReduce::mean}});
    }
    read(s, "reasr_bound", c.scan.reasr_bound, "scan");
  }
  if (j.contains("mitigate")) {
    const auto& m = j["mitigate"];
    check_keys(m, "mitigate", {"top_p", "delta", "max_iterations", "retrain", "retrain_valid_fraction", "membership"});
    read(m, "top_p", c.mitigate.top_p, "mitigate");
    read(m, "delta", c.mitigate.delta, "mitigate");
    read(m, "max_iterations", c.mitigate.max_iterations, "mitigate");
    if (m.contains("retrain")) train_from_json(m["retrain"], c.mitigate.retrain, "mitigate.retrain");
    read(m, "retrain_valid_fraction", c.mitigate.retrain_valid_fraction, "mitigate");
    if (m.contains("membership")) {
      c.mitigate.membership = parse_enum<ClassMembership>(
          m["membership"], "mitigate.membership",
          {{"predicted", ClassMembership::predicted}, {"true_label", ClassMembership::true_label}});
    }
  }
  read(j, "top_p_sweep", c.top_p_sweep, "");
  read(j, "prune_rates", c.prune_rates, "");
  if (j.contains("unlearn")) {
    const auto& u = j["unlearn"];
    check_keys(u, "unlearn", {"train_subset_fraction", "replace_fraction", "train"});
    read(u, "train_subset_fraction", c.unlearn.train_subset_fraction, "unlearn");
    read(u, "replace_fraction", c.unlearn.replace_fraction, "unlearn");
    if (u.contains("train")) train_from_json(u["train"], c.unlearn.train, "unlearn.train");
  }
  return c;
}

inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig parse_config(std::string_view text, const std::string& what = "config") {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": parse error: " + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::string& path) {
  const auto bytes = io::read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path);
}

// `key=value` with a dotted key ("scan.lambda=5"). The value is read as JSON
// when it parses, otherwise as a bare string. The key must already exist.
inline void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  std::string pointer;
  for (char ch : key) pointer += ch == '.' ? '/' : ch;
  const json::json_pointer ptr("/" + pointer);
  if (!j.contains(ptr)) throw ConfigError("--set: unknown key '" + key + "'");
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  j[ptr] = value;
}

inline RunConfig with_overrides(const RunConfig& base, std::span<const std::string> assignments) {
  json j = to_json(base);
  for (const auto& a : assignments) apply_override(j, a);
  return config_from_json(j);
}

// Stable 64-bit identity of a config, used to name report files.
inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(io::fnv1a(to_json(c).dump())));
  return buf;
}

}  // namespace tjlab
