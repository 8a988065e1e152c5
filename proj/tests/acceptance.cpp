// Acceptance run: one PASS/FAIL line per criterion, also written to
// <work dir>/acceptance.txt.
//   tjlab_acceptance <tjlab binary> <config json> <work dir>
// Criteria 2-8 read the bundle of the first of two `repro` runs; criterion 10
// compares the two bundles byte for byte.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tjlab/pipeline.hpp"
#include "tjlab/tjlab.hpp"

namespace fs = std::filesystem;
using namespace tjlab;

namespace {

int failures = 0;
std::map<int, std::string> lines;

void verdict(int id, bool ok, const std::string& name, const std::string& detail) {
  char head[32];
  std::snprintf(head, sizeof head, "[%s] %2d ", ok ? "PASS" : "FAIL", id);
  lines[id] = head + name + ": " + detail;
  failures += !ok;
}

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Network<double> mlp_222() {
  Network<double> net({2, 1, 1}, {LayerSpec::dense(2), LayerSpec::dense(2)});
  net.params()[0].weights = {1, 0, 0, 1};
  net.params()[0].bias = {0, 0};
  net.params()[1].weights = {1, 2, 3, 4};
  net.params()[1].bias = {0, 0};
  return net;
}

void gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  oracle::GradCheck worst;
  for (const auto& net : oracle::small_models(2024)) {
    const auto xs = oracle::random_inputs(net, 3, 17);
    const auto r = oracle::check_gradients(net, xs, {0, 1, 2});
    worst.max_param_rel = std::max(worst.max_param_rel, r.max_param_rel);
    worst.max_input_rel = std::max(worst.max_input_rel, r.max_input_rel);
    worst.checked += r.checked;
  }
  const double secs = seconds_since(t0);
  verdict(1, worst.max_param_rel < 1e-5 && worst.max_input_rel < 1e-5 && secs < 60, "gradient oracle",
          "3 models, " + std::to_string(worst.checked) + " derivatives, max rel err params " + sci(worst.max_param_rel) +
              " inputs " + sci(worst.max_input_rel) + ", " + num(secs, 1) + " s");
}

void stimulation_oracle() {
  const auto net = mlp_222();
  TensorSet<double> seeds{{2, 1, 1}, {}, {}};
  seeds.push_back(std::vector<double>{1, -2}, 0);
  seeds.push_back(std::vector<double>{0.5, 0.25}, 1);
  seeds.push_back(std::vector<double>{0, 0}, 0);
  std::vector<double> grid;
  for (int j = 0; j <= 40; ++j) grid.push_back(0.25 * j);
  std::size_t points = 0, same = 0;
  for (const auto& n : net.hidden_units()) {
    const auto p = stimulate_neuron<double>(net, n, seeds, grid);
    const auto ref = oracle::stimulation<double>(net, n, seeds, grid);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      for (std::size_t j = 0; j < grid.size(); ++j) {
        ++points;
        same += p.curves[i][j] == ref[i][j];
      }
    }
  }
  verdict(9, same == points, "stimulation oracle",
          std::to_string(same) + "/" + std::to_string(points) + " (unit, seed, grid point) labels match");
}

struct Run {
  fs::path dir;
  int status = -1;
  double seconds = 0;
};

Run repro(const std::string& cli, const std::string& config, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cmd = "\"" + cli + "\" repro --config \"" + config + "\" --out-dir \"" + dir.string() + "\" > \"" +
                          (dir / "repro.log").string() + "\" 2>&1";
  const auto t0 = std::chrono::steady_clock::now();
  Run r{dir, std::system(cmd.c_str()), 0};
  r.seconds = seconds_since(t0);
  return r;
}

std::vector<fs::path> artifacts(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("timings-", 0) == 0 || name == "repro.log") continue;
    out.push_back(e.path().filename());
  }
  std::sort(out.begin(), out.end());
  return out;
}

const MitigationRecord* find_mitigation(const ExperimentRecord& r, const std::string& model, int top_p) {
  for (const auto& m : r.mitigations) {
    if (m.model == model && m.top_p == top_p) return &m;
  }
  return nullptr;
}

const ModelRecord* find_model(const ExperimentRecord& r, const std::string& name) {
  for (const auto& m : r.models) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

double stage_seconds(const nlohmann::json& timings, const std::string& stage) {
  for (const auto& t : timings) {
    if (t.at("stage") == stage) return t.at("seconds").get<double>();
  }
  return -1;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 4) {
    std::fprintf(stderr, "usage: %s <tjlab binary> <config json> <work dir>\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1], config_path = argv[2];
  const fs::path work = argv[3];

  gradient_oracle();
  stimulation_oracle();

  const auto cfg = load_config(config_path);
  const auto hash = config_hash(cfg);
  const int classes = cfg.data.class_count;
  const auto pct_classes = [&](int pct) { return static_cast<int>(std::lround(classes * pct / 100.0)); };

  std::printf("running repro twice with %s (config %s)\n", config_path.c_str(), hash.c_str());
  std::fflush(stdout);
  const auto a = repro(cli, config_path, work / "run-a");
  std::printf("run a: exit %d, %.0f s\n", a.status, a.seconds);
  std::fflush(stdout);
  const auto b = repro(cli, config_path, work / "run-b");
  std::printf("run b: exit %d, %.0f s\n", b.status, b.seconds);
  std::fflush(stdout);

  const auto paths = bundle_paths(a.dir, hash);
  ExperimentRecord rec;
  nlohmann::json timings = nlohmann::json::array();
  bool loaded = false;
  if (a.status == 0 && fs::exists(paths.report_json)) {
    const auto bytes = io::read_file(paths.report_json.string());
    rec = record_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
    const auto tb = io::read_file((a.dir / ("timings-" + hash + ".json")).string());
    timings = nlohmann::json::parse(tb.begin(), tb.end());
    loaded = true;
  }
  if (!loaded) {
    for (int id = 2; id <= 8; ++id) verdict(id, false, "repro", "run a failed, see " + (a.dir / "repro.log").string());
  } else {
    const auto* benign = find_model(rec, "benign");
    const auto* trojan = find_model(rec, "trojan");

    {
      const double secs = stage_seconds(timings, "train benign");
      const bool ok = benign && benign->test_accuracy >= 0.95 && cfg.train.epochs <= 30 && secs >= 0 && secs < 600;
      verdict(2, ok, "benign training",
              "test accuracy " + num(benign ? 100 * benign->test_accuracy : 0, 2) + "% after " +
                  std::to_string(cfg.train.epochs) + " epochs in " + num(secs, 0) + " s");
    }
    {
      const double gap = benign && trojan ? 100 * std::abs(benign->test_accuracy - trojan->test_accuracy) : 100;
      const double asr = trojan ? trojan->planted.targeted : 0;
      verdict(3, gap <= 2.0 && asr >= 0.9, "attack viability",
              "clean accuracy benign " + num(benign ? 100 * benign->test_accuracy : 0, 2) + "% trojan " +
                  num(trojan ? 100 * trojan->test_accuracy : 0, 2) + "% (gap " + num(gap, 2) +
                  " pts), planted targeted ASR " + num(100 * asr, 2) + "%");
    }
    {
      std::size_t kept = 0, strong = 0, candidates = 0, sound = 0;
      double best = 0;
      for (const auto& s : rec.scans) {
        candidates += s.candidates;
        sound += s.sound_candidates;
        if (s.model != "trojan") continue;
        for (const auto& m : s.masks) {
          if (!m.kept) continue;
          ++kept;
          best = std::max(best, m.test.targeted);
          strong += m.test.targeted >= 0.5;
        }
      }
      verdict(4, strong >= 1 && sound == candidates, "detection",
              std::to_string(kept) + " masks kept on the trojan model, " + std::to_string(strong) +
                  " with test ASR >= 50% (best " + num(100 * best, 2) + "%), sound candidates " + std::to_string(sound) +
                  "/" + std::to_string(candidates) + " across both scans");
    }
    {
      const int p = pct_classes(40);
      const auto* m = find_mitigation(rec, "trojan", p);
      const double secs = stage_seconds(timings, "mitigate trojan top_p=" + std::to_string(p));
      if (!m || !trojan) {
        verdict(5, false, "mitigation", "no trojan mitigation at top_p=" + std::to_string(p) + " in the report");
      } else {
        const double drop = 100 * (trojan->test_accuracy - m->test_accuracy);
        const bool ok = m->report.stop_reason == StopReason::clean && m->report.iterations.size() <= 3 &&
                        m->report.delta == 8.0 && m->planted.targeted < 0.10 && drop <= 8.0 && secs < 1800;
        verdict(5, ok, "mitigation",
                "top_p=" + std::to_string(p) + " stop " + to_string(m->report.stop_reason) + " after " +
                    std::to_string(m->report.iterations.size()) + " iterations, planted ASR " +
                    num(100 * m->planted.targeted, 2) + "%, test accuracy drop " + num(drop, 2) + " pts, " +
                    num(secs, 0) + " s");
      }
    }
    {
      const int lo = pct_classes(20), hi = pct_classes(100);
      const auto* ml = find_mitigation(rec, "trojan", lo);
      const auto* mm = find_mitigation(rec, "trojan", pct_classes(60));
      const auto* mh = find_mitigation(rec, "trojan", hi);
      if (!ml || !mm || !mh || !trojan) {
        verdict(6, false, "top_p trend", "sweep is missing one of top_p " + std::to_string(lo) + ", " +
                                             std::to_string(pct_classes(60)) + ", " + std::to_string(hi));
      } else {
        auto drop = [&](const MitigationRecord* m) { return 100 * (trojan->test_accuracy - m->test_accuracy); };
        verdict(6, drop(ml) <= drop(mh) + 1.0, "top_p trend",
                "test accuracy drop at top_p=" + std::to_string(lo) + " " + num(drop(ml), 2) + " pts, top_p=" +
                    std::to_string(pct_classes(60)) + " " + num(drop(mm), 2) + " pts, top_p=" + std::to_string(hi) +
                    " " + num(drop(mh), 2) + " pts");
      }
    }
    {
      const ArmRecord *retrain = nullptr, *unlearn = nullptr;
      for (const auto& arm : rec.comparison) {
        if (arm.name.rfind("retraining", 0) == 0) retrain = &arm;
        if (arm.name == "unlearning") unlearn = &arm;
      }
      const bool ok = retrain && unlearn && retrain->planted.targeted <= unlearn->planted.targeted;
      verdict(7, ok, "baseline comparison",
              "planted ASR retraining " + num(retrain ? 100 * retrain->planted.targeted : -1, 2) + "% vs unlearning " +
                  num(unlearn ? 100 * unlearn->planted.targeted : -1, 2) + "%");
    }
    {
      const auto model = load_checkpoint<float>((a.dir / "trojan.tjf").string());
      const auto& units = rec.pruned_neurons;
      const bool identical = encode_checkpoint(prune(model, std::span<const NeuronRef>(units), 0.0)) ==
                             encode_checkpoint(model);
      const auto off = prune(model, std::span<const NeuronRef>(units), 1.0);
      Rng rng(8);
      std::size_t nonzero = 0;
      std::vector<float> x(model.input_shape().size());
      for (int i = 0; i < 100; ++i) {
        for (auto& v : x) v = static_cast<float>(uniform01(rng));
        const auto t = off.trace(x);
        for (const auto& n : units) {
          const auto plane = off.output_shape(n.layer).plane();
          for (std::size_t j = 0; j < plane; ++j) nonzero += t.outputs[n.layer][n.unit * plane + j] != 0.f;
        }
      }
      const auto text = io::read_file(paths.report_text.string());
      const std::string report(text.begin(), text.end());
      const bool emitted = report.find("Pruning flagged units") != std::string::npos &&
                           report.find("Defense comparison") != std::string::npos &&
                           report.find("pruning rate=") != std::string::npos;
      std::string ordering = "-";
      for (const auto& arm : rec.comparison) {
        if (arm.name.rfind("pruning", 0) == 0) ordering = num(100 * arm.planted.targeted, 2) + "%";
      }
      verdict(8, identical && nonzero == 0 && emitted && !units.empty(), "pruning laws",
              std::to_string(units.size()) + " flagged units, rate 0 " + (identical ? "bit-identical" : "CHANGED") +
                  ", rate 1 nonzero activations " + std::to_string(nonzero) + " over 100 inputs, report " +
                  (emitted ? "has" : "lacks") + " the comparison (planted ASR after full pruning " + ordering + ")");
    }
  }

  {
    bool same = a.status == 0 && b.status == 0;
    const auto fa = same ? artifacts(a.dir) : std::vector<fs::path>{};
    const auto fb = same ? artifacts(b.dir) : std::vector<fs::path>{};
    same = same && fa == fb && !fa.empty();
    std::size_t compared = 0;
    for (std::size_t i = 0; same && i < fa.size(); ++i) {
      same = io::read_file((a.dir / fa[i]).string()) == io::read_file((b.dir / fb[i]).string());
      ++compared;
    }
    verdict(10, same, "determinism",
            std::to_string(compared) + " files compared between two repro runs (" + num(a.seconds, 0) + " s, " +
                num(b.seconds, 0) + " s)");
  }

  std::string summary;
  for (const auto& [id, line] : lines) summary += line + "\n";
  summary += std::to_string(failures) + " criteria failed\n";
  std::fputs(summary.c_str(), stdout);
  io::write_text((work / "acceptance.txt").string(), summary);
  return failures == 0 ? 0 : 1;
}
