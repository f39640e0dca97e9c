#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmx/metrics.hpp"
#include "mmx/model.hpp"
#include "mmx/training.hpp"

#ifndef MMX_VERSION
#define MMX_VERSION "0.1.0"
#endif

namespace mmx {

inline constexpr const char* kCodeVersion = MMX_VERSION;

// ---------------------------------------------------------------------------
// Experiment configuration: one JSON file drives every command.
//
// {
//   "data":  {"dir": "...", "samples": 2000, "seed": 0, "render_size": 64, "fractions": {...}},
//   "split_seed": 0,
//   "model": {...ModelConfig overrides...},
//   "train": {...TrainConfig overrides...}
// }

struct ExperimentConfig {
  std::filesystem::path data_dir = "data";
  int samples = 2000;
  std::uint64_t data_seed = 0;
  RenderConfig render;
  ClassFractions fractions = default_distribution();
  std::uint64_t split_seed = 0;
  ModelConfig model;  // vocab_size is filled in from the training split
  TrainConfig train;

  /// One seed for data, split, init and shuffling.
  void apply_seed(std::uint64_t seed) {
    data_seed = seed;
    split_seed = seed;
    model.seed = seed;
    train.shuffle_seed = seed;
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"data",
           {{"dir", c.data_dir.string()},
            {"samples", c.samples},
            {"seed", c.data_seed},
            {"render", to_json(c.render)},
            {"fractions", fractions_to_json(c.fractions)}}},
          {"split_seed", c.split_seed},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("dir")) c.data_dir = d.at("dir").get<std::string>();
      if (d.contains("samples")) c.samples = d.at("samples").get<int>();
      if (d.contains("seed")) c.data_seed = d.at("seed").get<std::uint64_t>();
      if (d.contains("render")) c.render = render_from_json(d.at("render"));
      if (d.contains("render_size")) c.render.size = d.at("render_size").get<int>();
      if (d.contains("fractions")) c.fractions = fractions_from_json(d.at("fractions"));
    }
    if (j.contains("split_seed")) c.split_seed = j.at("split_seed").get<std::uint64_t>();
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

inline std::string config_fingerprint(const nlohmann::json& j) { return hex64(fnv1a64(j.dump())); }

/// run_manifest.json: what produced an output directory.
inline void write_run_manifest(const std::filesystem::path& out, const std::string& command,
                               const nlohmann::json& config, const std::string& dataset_hash,
                               const nlohmann::json& extra = nlohmann::json::object()) {
  detail::ensure_dir(out);
  nlohmann::json j{{"command", command},
                   {"config", config},
                   {"config_hash", config_fingerprint(config)},
                   {"dataset_hash", dataset_hash},
                   {"code_version", kCodeVersion}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  detail::write_file(out / "run_manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  SplitAssignment split;
  Vocabulary vocab;
  SensorStats stats;
  std::vector<Example> train, val, test;
  std::string dataset_fingerprint;
};

/// Vocabulary and sensor statistics come from the training split only.
inline PreparedData prepare_data(const std::vector<Sample>& samples, const SplitAssignment& split, int max_len) {
  std::unordered_map<std::string, const Sample*> by_id;
  for (const auto& s : samples) by_id.emplace(s.id, &s);
  auto lookup = [&](const std::string& id) -> const Sample& {
    auto it = by_id.find(id);
    require(it != by_id.end(), ErrorCode::invalid_argument, "split names unknown sample " + id);
    return *it->second;
  };

  PreparedData d;
  d.split = split;
  std::vector<std::string> corpus;
  std::vector<SensorReading> sensors;
  for (const auto& id : split.train) {
    const Sample& s = lookup(id);
    corpus.push_back(s.description);
    corpus.push_back(s.explanation);
    sensors.push_back(s.sensor);
  }
  d.vocab = build_vocab(corpus);
  d.stats = fit_sensor_stats(sensors);
  auto convert = [&](const std::vector<std::string>& ids, std::vector<Example>& out) {
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(prepare_example(lookup(id), d.stats, d.vocab, max_len));
  };
  convert(split.train, d.train);
  convert(split.val, d.val);
  convert(split.test, d.test);
  return d;
}

inline PreparedData prepare_data(const std::filesystem::path& dir, std::uint64_t split_seed, int max_len) {
  const DatasetManifest manifest = read_manifest(dir);
  PreparedData d = prepare_data(load_dataset(dir), split_dataset(manifest, split_seed), max_len);
  d.dataset_fingerprint = dataset_fingerprint(dir);
  return d;
}

// ---------------------------------------------------------------------------
// Train / evaluate

template <class T>
MetricsReport evaluate_examples(const MultimodalModel<T>& model, const std::vector<Example>& data,
                                const Vocabulary& vocab, bool with_bleu, int beams) {
  const EvalOutput ev = evaluate_model(model, data, vocab, with_bleu, beams);
  return make_report(ev.predictions, ev.labels, with_bleu ? &ev.hypotheses : nullptr,
                     with_bleu ? &ev.references : nullptr);
}

template <class T>
struct RunResult {
  TrainResult<T> trained;
  MetricsReport test;
};

template <class T>
RunResult<T> train_and_evaluate(const PreparedData& data, ModelConfig model_cfg, const TrainConfig& train_cfg,
                                const TrainHooks& hooks = {}) {
  model_cfg.vocab_size = data.vocab.size();
  RunResult<T> r;
  r.trained = train<T>(model_cfg, train_cfg, data.train, data.val, data.vocab, data.stats, hooks);
  const Checkpoint<T>& best = r.trained.best;
  const MultimodalModel<T> model(best.model, best.params);
  r.test = evaluate_examples(model, data.test, data.vocab, train_cfg.explanation_loss, train_cfg.eval_beams);
  return r;
}

/// Writes checkpoint/, train_log.jsonl and the test report into `out`.
template <class T>
void write_run(const RunResult<T>& r, const std::filesystem::path& out) {
  detail::ensure_dir(out);
  save_checkpoint(r.trained.best, out / "checkpoint");
  r.trained.log.write_jsonl(out / "train_log.jsonl");
  write_report(r.test, out);
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationResult {
  std::string name;
  double accuracy = 0.0;
  std::optional<double> bleu4;  // absent for wo_text
  bool failed = false;
  std::string error;
};

inline const std::array<const char*, 5> kAblationNames = {"full", "wo_video", "wo_sensor", "wo_text",
                                                          "simple_concat"};

inline void apply_ablation(const std::string& name, ModelConfig& m, TrainConfig& t) {
  if (name == "full") return;
  if (name == "wo_video") {
    m.modalities.video = false;
  } else if (name == "wo_sensor") {
    m.modalities.sensor = false;
  } else if (name == "wo_text") {
    m.modalities.text = false;
    t.explanation_loss = false;
  } else if (name == "simple_concat") {
    m.fusion = FusionMode::simple_concat;
  } else {
    fail(ErrorCode::invalid_argument, "unknown ablation '" + name + "'");
  }
}

struct AblationHooks {
  std::function<void(const std::string&, const EpochRecord&)> on_epoch;
  std::function<void(const AblationResult&)> on_result;
};

/// Retrains from the same seeds per configuration and evaluates on the test split.
/// A failing configuration is reported in its row; the remaining ones still run.
template <class T>
std::vector<AblationResult> run_ablation(const PreparedData& data, const ModelConfig& base_model,
                                         const TrainConfig& base_train, const std::filesystem::path* out = nullptr,
                                         const AblationHooks& hooks = {}) {
  std::vector<AblationResult> rows;
  for (const char* name : kAblationNames) {
    AblationResult row;
    row.name = name;
    try {
      ModelConfig m = base_model;
      TrainConfig t = base_train;
      apply_ablation(name, m, t);
      TrainHooks th;
      if (hooks.on_epoch) th.on_epoch = [&](const EpochRecord& e) { return hooks.on_epoch(name, e), true; };
      const RunResult<T> r = train_and_evaluate<T>(data, m, t, th);
      row.accuracy = r.test.accuracy;
      row.bleu4 = r.test.bleu4_corpus;
      if (out) write_run(r, *out / name);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    if (hooks.on_result) hooks.on_result(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationResult>& rows) {
  std::ostringstream out;
  out << "configuration,accuracy,bleu4,status\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.name << ",";
    if (r.failed) {
      out << ",,failed\n";
      continue;
    }
    std::snprintf(buf, sizeof buf, "%.6f", r.accuracy);
    out << buf << ",";
    if (r.bleu4) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.bleu4);
      out << buf;
    } else {
      out << "N/A";
    }
    out << ",ok\n";
  }
  return out.str();
}

inline nlohmann::json to_json(const std::vector<AblationResult>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"configuration", r.name}, {"accuracy", r.accuracy}, {"failed", r.failed}};
    j["bleu4"] = r.bleu4 ? nlohmann::json(*r.bleu4) : nlohmann::json("N/A");
    if (r.failed) j["error"] = r.error;
    arr.push_back(j);
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Single-sample explanation

struct ExplainRecord {
  std::string id;
  std::string action;
  std::array<double, kActionCount> probabilities{};
  std::string explanation;
  double latency_ms = 0.0;
  std::vector<std::string> attention_files;

  nlohmann::json to_json() const {
    nlohmann::json probs;
    for (int c = 0; c < kActionCount; ++c) probs[kActionNames[c]] = probabilities[c];
    return {{"id", id},           {"action", action},           {"probabilities", probs},
            {"explanation", explanation}, {"latency_ms", latency_ms}, {"attention_files", attention_files}};
  }
};

struct ExplainOptions {
  int beams = 5;
  /// When set, the checkpoint's vocabulary / stats must carry these fingerprints.
  std::string expected_vocab_fingerprint;
  std::string expected_stats_fingerprint;
  /// When set, per-layer attention CSVs are written here.
  std::optional<std::filesystem::path> attention_dir;
};

inline std::string stats_fingerprint(const SensorStats& s) { return hex64(fnv1a64(to_json(s).dump())); }

template <class T>
ExplainRecord explain_sample(const Checkpoint<T>& ck, const Sample& sample, const ExplainOptions& opt = {}) {
  require(opt.expected_vocab_fingerprint.empty() || opt.expected_vocab_fingerprint == ck.vocab.fingerprint(),
          ErrorCode::fingerprint_mismatch, "vocabulary fingerprint does not match the checkpoint");
  require(opt.expected_stats_fingerprint.empty() || opt.expected_stats_fingerprint == stats_fingerprint(ck.stats),
          ErrorCode::fingerprint_mismatch, "sensor statistics fingerprint does not match the checkpoint");
  const MultimodalModel<T> model(ck.model, ck.params);
  const auto started = std::chrono::steady_clock::now();
  const Example ex = prepare_example(sample, ck.stats, ck.vocab, ck.model.max_len);
  AttentionRecords rec;
  const Prediction<T> p = model.predict(ex, true, opt.beams, opt.attention_dir ? &rec : nullptr);
  ExplainRecord r;
  r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  r.id = sample.id;
  r.action = kActionNames[static_cast<std::size_t>(p.action.argmax())];
  r.probabilities = p.action.probs;
  r.explanation = detokenize(p.explanation_ids, ck.vocab);
  if (opt.attention_dir) {
    detail::ensure_dir(*opt.attention_dir);
    for (const AttentionRecord* a : {&rec.video, &rec.text}) {
      if (a->layers.empty()) continue;
      for (const auto& grid : export_attention(*a)) {
        const std::string file = "attention_" + grid.modality + "_layer" + std::to_string(grid.layer) + ".csv";
        write_attention_csv(grid, *opt.attention_dir / file);
        r.attention_files.push_back(file);
      }
    }
  }
  return r;
}

}  // namespace mmx
