#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tjlab/import.hpp"
#include "tjlab/tjlab.hpp"

namespace fs = std::filesystem;
using namespace tjlab;

namespace {

enum Exit { ok = 0, failure = 1, usage = 2, config_error = 3, io_error = 4, format_error = 5 };

struct Common {
  std::string config;
  std::vector<std::string> set;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run configuration (JSON); defaults apply when omitted");
  app->add_option("--set", c.set, "Override one config field, e.g. --set scan.lambda=10 (repeatable)");
}

RunConfig resolve(const Common& c) {
  RunConfig base;
  if (!c.config.empty()) {
    if (!fs::is_regular_file(c.config)) throw IoError("config file '" + c.config + "' not found");
    base = load_config(c.config);
  }
  auto cfg = with_overrides(base, c.set);
  cfg.validate();
  return cfg;
}

void need_file(const std::string& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw IoError(std::string(flag) + ": file '" + path + "' not found");
}

void need_writable(const std::string& path, const char* flag) {
  const auto parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) throw IoError(std::string(flag) + ": directory '" + parent.string() + "' does not exist");
}

void note(const std::string& s) { std::fprintf(stderr, "[tjlab] %s\n", s.c_str()); }

NeuronRef parse_neuron(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw Error("--neuron expects layer:unit, got '" + s + "'");
  try {
    return {static_cast<std::size_t>(std::stoul(s.substr(0, colon))), std::stoi(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw Error("--neuron expects layer:unit, got '" + s + "'");
  }
}

nlohmann::json eval_json(const EvalResult& e) {
  nlohmann::json j{{"dataset", e.dataset_id}, {"accuracy", e.accuracy}, {"precision", e.precision}, {"recall", e.recall}};
  j["confusion"] = e.confusion.counts();
  if (e.asr) {
    j["asr"] = {{"targeted", e.asr->targeted}, {"untargeted", e.asr->untargeted}, {"samples", e.asr->samples}};
    j["asr"]["target"] = e.asr->target ? nlohmann::json(*e.asr->target) : nlohmann::json(nullptr);
  }
  return j;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
  } else {
    io::write_text(path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor attack and defense lab: data, training, neuron scanning, retraining defense, reports.\n"
               "Thread count for scans comes from TJLAB_THREADS (default 1)."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common gen_c, poi_c, tr_c, sc_c, mit_c, pr_c, ev_c, rep_c, rp_c, cf_c;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset splits, or import an image folder");
  add_common(gen, gen_c);
  std::string gen_out, gen_import, gen_split = "train";
  gen->add_option("--out", gen_out, "Output directory for train/valid/test/seed .tjd files")->required();
  gen->add_option("--import", gen_import, "Import <dir>/<class>/<image> (png, jpg, ppm, ...) instead of generating");
  gen->add_option("--split", gen_split, "Split tag for imported data (train, valid, test, seed)");

  auto* poi = app.add_subcommand("poison", "Stamp the trojan trigger onto a dataset");
  add_common(poi, poi_c);
  std::string poi_in, poi_out;
  bool poi_all = false;
  poi->add_option("--in", poi_in, "Input dataset (.tjd)")->required();
  poi->add_option("--out", poi_out, "Output dataset (.tjd)")->required();
  poi->add_flag("--stamp-all", poi_all, "Stamp every image and keep labels (for ASR measurement)");

  auto* tr = app.add_subcommand("train", "Train the desk CNN");
  add_common(tr, tr_c);
  std::string tr_data, tr_valid, tr_out, tr_init, tr_name = "model";
  tr->add_option("--data", tr_data, "Training dataset (.tjd)")->required();
  tr->add_option("--valid", tr_valid, "Validation dataset (.tjd)");
  tr->add_option("--out", tr_out, "Output checkpoint (.tjf)")->required();
  tr->add_option("--init", tr_init, "Start from this checkpoint instead of a fresh initialisation");
  tr->add_option("--name", tr_name, "Model name; selects the training seed stream (repro uses benign/trojan)");

  auto* sc = app.add_subcommand("scan", "Stimulation scan, mask reverse engineering and REASR filtering");
  add_common(sc, sc_c);
  std::string sc_model, sc_seeds, sc_masks, sc_report, sc_test;
  sc->add_option("--model", sc_model, "Checkpoint (.tjf)")->required();
  sc->add_option("--seeds", sc_seeds, "Seed dataset (.tjd)")->required();
  sc->add_option("--masks-out", sc_masks, "Mask bundle for masks that pass the REASR bound (.tjm)")->required();
  sc->add_option("--report", sc_report, "Scan report (JSON); stdout when omitted");
  sc->add_option("--test", sc_test, "Test dataset for per-mask ASR (.tjd)");

  auto* mit = app.add_subcommand("mitigate", "Retraining defense driven by masked false positives");
  add_common(mit, mit_c);
  std::string mit_model, mit_masks, mit_test, mit_valid, mit_seeds, mit_out, mit_report;
  mit->add_option("--model", mit_model, "Checkpoint (.tjf)")->required();
  mit->add_option("--masks", mit_masks, "Mask bundle from scan (.tjm)")->required();
  mit->add_option("--test", mit_test, "Benign test split (.tjd)")->required();
  mit->add_option("--valid", mit_valid, "Benign validation split (.tjd)")->required();
  mit->add_option("--seeds", mit_seeds, "Seed dataset for rescans (.tjd)")->required();
  mit->add_option("--out", mit_out, "Output checkpoint (.tjf)")->required();
  mit->add_option("--report", mit_report, "Mitigation report (JSON); stdout when omitted");

  auto* pr = app.add_subcommand("prune", "Scale the incoming weights of flagged units by (1 - rate)");
  add_common(pr, pr_c);
  std::string pr_model, pr_masks, pr_out;
  std::vector<std::string> pr_neurons;
  double pr_rate = 1.0;
  pr->add_option("--model", pr_model, "Checkpoint (.tjf)")->required();
  pr->add_option("--masks", pr_masks, "Prune the source units of these masks (.tjm)");
  pr->add_option("--neuron", pr_neurons, "Unit to prune as layer:unit (repeatable)");
  pr->add_option("--rate", pr_rate, "Pruning rate in [0, 1]");
  pr->add_option("--out", pr_out, "Output checkpoint (.tjf)")->required();

  auto* ev = app.add_subcommand("eval", "Accuracy, confusion matrix and optional ASR");
  add_common(ev, ev_c);
  std::string ev_model, ev_data, ev_mask_file, ev_report;
  bool ev_trigger = false;
  std::size_t ev_mask_index = 0;
  ev->add_option("--model", ev_model, "Checkpoint (.tjf)")->required();
  ev->add_option("--data", ev_data, "Dataset (.tjd)")->required();
  ev->add_flag("--trigger", ev_trigger, "Also measure planted-trigger ASR (trigger from the config)");
  ev->add_option("--mask-file", ev_mask_file, "Also measure ASR of a mask from this bundle (.tjm)");
  ev->add_option("--mask-index", ev_mask_index, "Which mask in --mask-file");
  ev->add_option("--report", ev_report, "Output JSON; stdout when omitted");

  auto* rep = app.add_subcommand("report", "Render the text tables of a stored report");
  add_common(rep, rep_c);
  std::string rep_in, rep_out;
  rep->add_option("--in", rep_in, "Report JSON written by repro")->required();
  rep->add_option("--out", rep_out, "Text output; stdout when omitted");

  auto* rp = app.add_subcommand("repro", "Full experiment: data, both models, scans, retraining sweep, baselines, report");
  add_common(rp, rp_c);
  std::string rp_dir;
  rp->add_option("--out-dir", rp_dir, "Output directory (overrides out_dir from the config)");

  auto* cf = app.add_subcommand("config", "Print the resolved configuration (defaults, --config file, --set overrides)");
  add_common(cf, cf_c);
  std::string cf_out;
  cf->add_option("--out", cf_out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : usage;
  }

  try {
    if (*gen) {
      const auto cfg = resolve(gen_c);
      if (!gen_import.empty() && !fs::is_directory(gen_import)) throw IoError("--import: '" + gen_import + "' is not a directory");
      fs::create_directories(gen_out);
      if (!gen_import.empty()) {
        const auto ds = import_image_directory(gen_import, cfg.data.geometry, cfg.data.class_count, parse_split(gen_split));
        save_dataset(ds, (fs::path(gen_out) / (gen_split + ".tjd")).string());
        note("imported " + std::to_string(ds.size()) + " images");
      } else {
        const auto b = generate(synth_config(cfg));
        save_dataset(b.train, (fs::path(gen_out) / "train.tjd").string());
        save_dataset(b.valid, (fs::path(gen_out) / "valid.tjd").string());
        save_dataset(b.test, (fs::path(gen_out) / "test.tjd").string());
        save_dataset(b.seed, (fs::path(gen_out) / "seed.tjd").string());
      }
    } else if (*poi) {
      const auto cfg = resolve(poi_c);
      need_file(poi_in, "--in");
      need_writable(poi_out, "--out");
      const auto ds = load_dataset(poi_in);
      const auto out = poi_all ? stamped_test(cfg, ds) : poison_train(cfg, ds);
      save_dataset(out, poi_out);
      note("poisoned " + std::to_string(out.poisoned_count()) + " of " + std::to_string(out.size()) + " images");
    } else if (*tr) {
      const auto cfg = resolve(tr_c);
      need_file(tr_data, "--data");
      if (!tr_valid.empty()) need_file(tr_valid, "--valid");
      if (!tr_init.empty()) need_file(tr_init, "--init");
      need_writable(tr_out, "--out");
      const auto data = to_tensors<float>(load_dataset(tr_data));
      std::optional<TensorSet<float>> valid;
      if (!tr_valid.empty()) valid = to_tensors<float>(load_dataset(tr_valid));
      auto net = tr_init.empty() ? initial_network(cfg) : load_checkpoint<float>(tr_init);
      const auto res = train(std::move(net), data, valid ? &*valid : nullptr, train_config(cfg, tr_name));
      for (const auto& e : res.history.epochs) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %d loss %.4f train acc %.4f", e.epoch, e.train_loss, e.train_accuracy);
        std::string line = buf;
        if (e.valid_accuracy) {
          std::snprintf(buf, sizeof buf, " valid acc %.4f", *e.valid_accuracy);
          line += buf;
        }
        note(line);
      }
      save_checkpoint(res.model, tr_out);
    } else if (*sc) {
      const auto cfg = resolve(sc_c);
      need_file(sc_model, "--model");
      need_file(sc_seeds, "--seeds");
      if (!sc_test.empty()) need_file(sc_test, "--test");
      need_writable(sc_masks, "--masks-out");
      if (!sc_report.empty()) need_writable(sc_report, "--report");
      const auto net = load_checkpoint<float>(sc_model);
      const auto seeds = to_tensors<float>(load_dataset(sc_seeds));
      const auto scfg = scan_config(cfg);
      const auto res = scan(net, seeds, scfg);
      const auto test = sc_test.empty() ? seeds : to_tensors<float>(load_dataset(sc_test));
      auto kept = res.masks;
      if (!sc_test.empty()) {
        for (auto& m : kept) m.asr_test = attack_success_rate(net, test, m, m.source.elevated_label).targeted;
      }
      save_masks(std::span<const TrojanMask>(kept), sc_masks);
      auto rec = scan_record("model", net, res, seeds, test, scfg);
      ExperimentRecord er;
      er.scans = {rec};
      auto j = report_json(er)["scans"][0];
      j["asr_split"] = sc_test.empty() ? "seed" : "test";
      emit(j.dump(2) + "\n", sc_report);
    } else if (*mit) {
      const auto cfg = resolve(mit_c);
      for (const auto& [p, f] : {std::pair{mit_model, "--model"}, {mit_masks, "--masks"}, {mit_test, "--test"},
                                  {mit_valid, "--valid"}, {mit_seeds, "--seeds"}}) {
        need_file(p, f);
      }
      need_writable(mit_out, "--out");
      if (!mit_report.empty()) need_writable(mit_report, "--report");
      const auto net = load_checkpoint<float>(mit_model);
      const auto masks = load_masks(mit_masks);
      const auto test = to_tensors<float>(load_dataset(mit_test));
      const auto valid = to_tensors<float>(load_dataset(mit_valid));
      const auto seeds = to_tensors<float>(load_dataset(mit_seeds));
      const auto res = mitigate<float>(net, masks, test, valid, seeds, mitigation_config(cfg, cfg.mitigate.top_p));
      save_checkpoint(res.model, mit_out);
      MitigationRecord mr{"model", cfg.mitigate.top_p, res.report, accuracy(res.model, test), {}};
      ExperimentRecord er;
      er.mitigations = {mr};
      auto j = report_json(er)["mitigations"][0];
      j.erase("planted_asr");
      emit(j.dump(2) + "\n", mit_report);
      note(std::string("stop reason: ") + to_string(res.report.stop_reason));
    } else if (*pr) {
      resolve(pr_c);
      need_file(pr_model, "--model");
      if (!pr_masks.empty()) need_file(pr_masks, "--masks");
      need_writable(pr_out, "--out");
      std::vector<NeuronRef> units;
      for (const auto& s : pr_neurons) units.push_back(parse_neuron(s));
      if (!pr_masks.empty()) {
        for (const auto& m : load_masks(pr_masks)) {
          if (std::find(units.begin(), units.end(), m.source.neuron) == units.end()) units.push_back(m.source.neuron);
        }
      }
      if (units.empty()) throw Error("prune: give --masks or at least one --neuron");
      save_checkpoint(prune(load_checkpoint<float>(pr_model), std::span<const NeuronRef>(units), pr_rate), pr_out);
    } else if (*ev) {
      const auto cfg = resolve(ev_c);
      need_file(ev_model, "--model");
      need_file(ev_data, "--data");
      if (!ev_mask_file.empty()) need_file(ev_mask_file, "--mask-file");
      if (!ev_report.empty()) need_writable(ev_report, "--report");
      const auto net = load_checkpoint<float>(ev_model);
      const auto ds = load_dataset(ev_data);
      const auto data = to_tensors<float>(ds);
      auto out = eval_json(evaluate(net, data, ev_data));
      if (ev_trigger) {
        const auto stamped = to_tensors<float>(stamped_test(cfg, ds));
        const auto a = attack_success_rate(net, stamped, cfg.trojan.target_class);
        out["trigger_asr"] = {{"target", cfg.trojan.target_class}, {"targeted", a.targeted}, {"untargeted", a.untargeted}};
      }
      if (!ev_mask_file.empty()) {
        const auto masks = load_masks(ev_mask_file);
        if (ev_mask_index >= masks.size()) throw Error("--mask-index out of range");
        const auto& m = masks[ev_mask_index];
        const auto a = attack_success_rate(net, data, m, m.source.elevated_label);
        out["mask_asr"] = {{"target", m.source.elevated_label}, {"targeted", a.targeted}, {"untargeted", a.untargeted}};
      }
      emit(out.dump(2) + "\n", ev_report);
    } else if (*rep) {
      resolve(rep_c);
      need_file(rep_in, "--in");
      if (!rep_out.empty()) need_writable(rep_out, "--out");
      const auto bytes = io::read_file(rep_in);
      const auto j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
      if (j.is_discarded()) throw FormatError(rep_in + ": not valid JSON");
      emit(report_text(record_from_json(j)), rep_out);
    } else if (*cf) {
      const auto cfg = resolve(cf_c);
      if (!cf_out.empty()) need_writable(cf_out, "--out");
      emit(dump_config(cfg), cf_out);
    } else if (*rp) {
      const auto cfg = resolve(rp_c);
      const fs::path dir = rp_dir.empty() ? fs::path(cfg.out_dir) : fs::path(rp_dir);
      fs::create_directories(dir);
      const auto ex = run_experiment(cfg, note);
      const auto paths = write_experiment(ex, dir);
      note("report: " + paths.report_text.string());
      std::cout << report_text(ex.record);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "tjlab: config error: %s\n", e.what());
    return config_error;
  } catch (const IoError& e) {
    std::fprintf(stderr, "tjlab: %s\n", e.what());
    return io_error;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "tjlab: bad file: %s\n", e.what());
    return format_error;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "tjlab: %s\n", e.what());
    return failure;
  }
  return ok;
}
