#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mmx/metrics.hpp"
#include "mmx/model.hpp"

namespace mmx {

static_assert(std::endian::native == std::endian::little, "tensor files are written little-endian");

enum class Precision { float32, float64 };

inline const char* to_string(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "float32") return Precision::float32;
  if (s == "float64") return Precision::float64;
  fail(ErrorCode::invalid_config, "unknown precision '" + s + "'");
}

template <class T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::float32 : Precision::float64;
}

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  int batch_size = 4;
  int epochs = 5;
  std::uint64_t shuffle_seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int eval_every = 1;
  bool explanation_loss = true;  // off for the text ablation
  int eval_beams = 5;
  Precision precision = Precision::float32;

  void validate() const {
    require(learning_rate > 0 && weight_decay >= 0 && batch_size > 0 && epochs >= 1 && eval_every >= 1 &&
                eval_beams >= 1,
            ErrorCode::invalid_config, "training rates and sizes must be positive");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0, ErrorCode::invalid_config,
            "Adam betas must lie in [0,1) and epsilon must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},       {"epochs", c.epochs},
          {"shuffle_seed", c.shuffle_seed},   {"beta1", c.beta1},
          {"beta2", c.beta2},                 {"epsilon", c.epsilon},
          {"eval_every", c.eval_every},       {"explanation_loss", c.explanation_loss},
          {"eval_beams", c.eval_beams},       {"precision", to_string(c.precision)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("learning_rate", c.learning_rate);
  get("weight_decay", c.weight_decay);
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("shuffle_seed", c.shuffle_seed);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("epsilon", c.epsilon);
  get("eval_every", c.eval_every);
  get("explanation_loss", c.explanation_loss);
  get("eval_beams", c.eval_beams);
  if (j.contains("precision")) c.precision = parse_precision(j.at("precision").get<std::string>());
  return c;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay

template <class T>
struct AdamState {
  ParamStore<T> m;
  ParamStore<T> v;
  std::int64_t step = 0;

  static AdamState zeros(const ParamStore<T>& params) { return {params.zeros_like(), params.zeros_like(), 0}; }
};

/// Linear and projection weights decay; biases, norms and embedding tables do not.
inline bool decays(const std::string& name) { return ends_with(name, ".weight"); }

template <class T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& state, const TrainConfig& cfg) {
  require(params.shapes() == grads.shapes() && params.shapes() == state.m.shapes() &&
              params.shapes() == state.v.shapes(),
          ErrorCode::shape_mismatch, "adam_step: parameter, gradient and moment shapes differ");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.epsilon);
  const T decay = static_cast<T>(cfg.learning_rate * cfg.weight_decay);
  const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
  for (auto& [name, w] : params) {
    const Mat<T>& g = grads[name];
    Mat<T>& m = state.m[name];
    Mat<T>& v = state.v[name];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    if (decays(name) && cfg.weight_decay != 0.0) w -= decay * w;
    w.array() -= lr * (m.array() * inv_bc1) / ((v.array() * inv_bc2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Training log

struct IterationRecord {
  int epoch = 0;
  int iteration = 0;
  double total = 0.0;
  double action = 0.0;
  double explanation = 0.0;
  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct EpochRecord {
  int epoch = 0;
  int iterations = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  std::optional<double> val_bleu4;
  double wall_clock_s = 0.0;

  /// Everything except wall-clock time.
  bool same_values(const EpochRecord& o) const {
    return epoch == o.epoch && iterations == o.iterations && train_loss == o.train_loss &&
           train_accuracy == o.train_accuracy && val_accuracy == o.val_accuracy && val_bleu4 == o.val_bleu4;
  }
};

struct TrainLog {
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;

  bool same_values(const TrainLog& o) const {
    if (iterations != o.iterations || epochs.size() != o.epochs.size()) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i)
      if (!epochs[i].same_values(o.epochs[i])) return false;
    return true;
  }

  /// JSON lines: one record per iteration, one per epoch.
  void write_jsonl(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io_error, "cannot write " + path.string());
    std::size_t next = 0;
    for (const auto& e : epochs) {
      while (next < iterations.size() && iterations[next].epoch == e.epoch) {
        const auto& it = iterations[next++];
        out << nlohmann::json{{"type", "iteration"}, {"epoch", it.epoch}, {"iteration", it.iteration},
                              {"total_loss", it.total}, {"action_loss", it.action},
                              {"explanation_loss", it.explanation}}
                   .dump()
            << "\n";
      }
      nlohmann::json j{{"type", "epoch"},
                       {"epoch", e.epoch},
                       {"iterations", e.iterations},
                       {"train_loss", e.train_loss},
                       {"train_accuracy", e.train_accuracy},
                       {"val_accuracy", e.val_accuracy},
                       {"wall_clock_s", e.wall_clock_s}};
      j["val_bleu4"] = e.val_bleu4 ? nlohmann::json(*e.val_bleu4) : nlohmann::json(nullptr);
      out << j.dump() << "\n";
    }
  }
};

/// ceil(n / batch): the last partial batch is trained.
inline int iterations_per_epoch(std::size_t n_train, int batch_size) {
  return static_cast<int>((n_train + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
}

// ---------------------------------------------------------------------------
// Evaluation used during training and by the CLI

struct EvalOutput {
  std::vector<int> predictions;
  std::vector<int> labels;
  std::vector<std::string> hypotheses;  // empty when not decoded
  std::vector<std::string> references;
};

template <class T>
EvalOutput evaluate_model(const MultimodalModel<T>& model, const std::vector<Example>& data, const Vocabulary& vocab,
                          bool decode, int beams) {
  EvalOutput out;
  for (const auto& ex : data) {
    const Prediction<T> p = model.predict(ex, decode, beams);
    out.predictions.push_back(p.action.argmax());
    out.labels.push_back(ex.action);
    if (decode) {
      out.hypotheses.push_back(detokenize(p.explanation_ids, vocab));
      out.references.push_back(detokenize(ex.explanation, vocab));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointFormatVersion = 1;

template <class T>
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ParamStore<T> params;
  AdamState<T> adam;
  int epoch = 0;
  nlohmann::json metrics = nlohmann::json::object();
  Vocabulary vocab;
  SensorStats stats;
};

template <class T>
struct TrainResult {
  Checkpoint<T> best;
  TrainLog log;
};

struct TrainHooks {
  /// Called after each epoch; returning false stops training.
  std::function<bool(const EpochRecord&)> on_epoch;
  /// Called after each iteration.
  std::function<void(const IterationRecord&)> on_iteration;
};

/// Mini-batch training of the joint loss with per-epoch validation. Returns the
/// epoch with the best validation accuracy (ties: higher BLEU-4, then earlier).
template <class T>
TrainResult<T> train(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<Example>& train_set,
                     const std::vector<Example>& val_set, const Vocabulary& vocab, const SensorStats& stats,
                     const TrainHooks& hooks = {}) {
  cfg.validate();
  model_cfg.validate();
  require(!train_set.empty(), ErrorCode::invalid_argument, "empty training split");
  MultimodalModel<T> model = MultimodalModel<T>::initialized(model_cfg, model_cfg.seed);
  AdamState<T> adam = AdamState<T>::zeros(model.params());
  ParamStore<T> grads = model.params().zeros_like();

  TrainResult<T> result;
  std::optional<std::pair<double, double>> best_score;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const int per_epoch = iterations_per_epoch(train_set.size(), cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    Rng rng(mix_seed(cfg.shuffle_seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    int correct = 0;
    for (int it = 0; it < per_epoch; ++it) {
      const std::size_t lo = static_cast<std::size_t>(it) * static_cast<std::size_t>(cfg.batch_size);
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      const T scale = T(1) / static_cast<T>(hi - lo);
      grads.set_zero();
      LossParts batch;
      for (std::size_t k = lo; k < hi; ++k) {
        ActionDistribution dist;
        const LossParts l = model.loss(train_set[order[k]], cfg.explanation_loss, &grads, scale, &dist);
        batch.action += l.action;
        batch.explanation += l.explanation;
        correct += dist.argmax() == train_set[order[k]].action;
      }
      const double inv = 1.0 / static_cast<double>(hi - lo);
      batch.action *= inv;
      batch.explanation *= inv;
      batch.total = total_loss(batch.action, batch.explanation);
      if (!std::isfinite(batch.total) || !grads.all_finite()) {
        std::string ids;
        for (std::size_t k = lo; k < hi; ++k) ids += (k > lo ? "," : "") + train_set[order[k]].id;
        fail(ErrorCode::non_finite, "non-finite loss at epoch " + std::to_string(epoch) + " iteration " +
                                        std::to_string(it) + " (batch " + ids + ")");
      }
      adam_step(model.params(), grads, adam, cfg);
      const IterationRecord rec{epoch, it, batch.total, batch.action, batch.explanation};
      result.log.iterations.push_back(rec);
      if (hooks.on_iteration) hooks.on_iteration(rec);
      loss_sum += batch.total;
    }

    EpochRecord er;
    er.epoch = epoch;
    er.iterations = per_epoch;
    er.train_loss = loss_sum / per_epoch;
    er.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    const bool evaluate_now = !val_set.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (evaluate_now) {
      const EvalOutput ev = evaluate_model(model, val_set, vocab, cfg.explanation_loss, cfg.eval_beams);
      er.val_accuracy = accuracy(ev.predictions, ev.labels);
      if (cfg.explanation_loss) er.val_bleu4 = bleu4(ev.hypotheses, ev.references).corpus;
    }
    er.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.epochs.push_back(er);

    if (evaluate_now || val_set.empty()) {
      const std::pair<double, double> score{er.val_accuracy, er.val_bleu4.value_or(0.0)};
      if (!best_score || score > *best_score) {
        best_score = score;
        result.best = Checkpoint<T>{model.config(), cfg, model.params(), adam, epoch, {}, vocab, stats};
        result.best.metrics = {{"epoch", epoch}, {"train_loss", er.train_loss}, {"val_accuracy", er.val_accuracy}};
        result.best.metrics["val_bleu4"] = er.val_bleu4 ? nlohmann::json(*er.val_bleu4) : nlohmann::json(nullptr);
      }
    }
    if (hooks.on_epoch && !hooks.on_epoch(er)) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint files: checkpoint.json + tensors.bin (+ vocab.json, sensor_stats.json)

namespace detail {

template <class T>
void append_tensor(std::string& blob, nlohmann::json& index, const std::string& name, const std::string& role,
                   const Mat<T>& m) {
  const std::size_t bytes = static_cast<std::size_t>(m.size()) * sizeof(T);
  index.push_back({{"name", name},
                   {"role", role},
                   {"shape", {m.rows(), m.cols()}},
                   {"dtype", to_string(precision_of<T>())},
                   {"offset", blob.size()},
                   {"bytes", bytes}});
  blob.append(reinterpret_cast<const char*>(m.data()), bytes);
}

}  // namespace detail

template <class T>
void save_checkpoint(const Checkpoint<T>& ck, const std::filesystem::path& dir) {
  detail::ensure_dir(dir);
  std::string blob;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, m] : ck.params) detail::append_tensor(blob, index, name, "param", m);
  for (const auto& [name, m] : ck.adam.m) detail::append_tensor(blob, index, name, "adam_m", m);
  for (const auto& [name, m] : ck.adam.v) detail::append_tensor(blob, index, name, "adam_v", m);

  const std::string vocab_json = ck.vocab.to_json().dump(2) + "\n";
  const std::string stats_json = to_json(ck.stats).dump(2) + "\n";
  nlohmann::json manifest{{"format_version", kCheckpointFormatVersion},
                          {"dtype", to_string(precision_of<T>())},
                          {"model_config", to_json(ck.model)},
                          {"train_config", to_json(ck.train)},
                          {"epoch", ck.epoch},
                          {"metrics", ck.metrics},
                          {"adam_step", ck.adam.step},
                          {"vocab_file", "vocab.json"},
                          {"vocab_fingerprint", hex64(fnv1a64(vocab_json))},
                          {"sensor_stats_file", "sensor_stats.json"},
                          {"sensor_stats_fingerprint", hex64(fnv1a64(stats_json))},
                          {"tensors_file", "tensors.bin"},
                          {"tensors_bytes", blob.size()},
                          {"tensors", index}};
  detail::write_file(dir / "tensors.bin", blob);
  detail::write_file(dir / "vocab.json", vocab_json);
  detail::write_file(dir / "sensor_stats.json", stats_json);
  detail::write_file(dir / "checkpoint.json", manifest.dump(2) + "\n");
}

/// Distinct error codes: version_mismatch, shape_mismatch, truncated,
/// fingerprint_mismatch. Stored arrays of the other precision are converted.
template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(dir / "checkpoint.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::corrupt_record, "checkpoint.json: " + std::string(e.what()));
  }
  const int version = manifest.at("format_version").get<int>();
  require(version == kCheckpointFormatVersion, ErrorCode::version_mismatch,
          "checkpoint format " + std::to_string(version) + ", expected " + std::to_string(kCheckpointFormatVersion));

  Checkpoint<T> ck;
  ck.model = model_config_from_json(manifest.at("model_config"));
  ck.train = train_config_from_json(manifest.at("train_config"));
  ck.epoch = manifest.at("epoch").get<int>();
  ck.metrics = manifest.at("metrics");
  ck.adam.step = manifest.at("adam_step").get<std::int64_t>();

  const std::string vocab_json = detail::read_file(dir / manifest.at("vocab_file").get<std::string>());
  const std::string stats_json = detail::read_file(dir / manifest.at("sensor_stats_file").get<std::string>());
  require(hex64(fnv1a64(vocab_json)) == manifest.at("vocab_fingerprint").get<std::string>(),
          ErrorCode::fingerprint_mismatch, "vocabulary does not match the checkpoint fingerprint");
  require(hex64(fnv1a64(stats_json)) == manifest.at("sensor_stats_fingerprint").get<std::string>(),
          ErrorCode::fingerprint_mismatch, "sensor statistics do not match the checkpoint fingerprint");
  ck.vocab = Vocabulary::from_json(nlohmann::json::parse(vocab_json));
  ck.stats = sensor_stats_from_json(nlohmann::json::parse(stats_json));

  const ParamShapes expected = model_shapes(ck.model);
  const auto& tensors = manifest.at("tensors");
  for (const auto& t : tensors) {
    const std::string name = t.at("name").get<std::string>();
    auto it = expected.find(name);
    require(it != expected.end(), ErrorCode::shape_mismatch, "unexpected tensor " + name);
    const Shape shape{t.at("shape").at(0).get<int>(), t.at("shape").at(1).get<int>()};
    require(shape == it->second, ErrorCode::shape_mismatch,
            name + ": stored shape (" + std::to_string(shape.rows) + "," + std::to_string(shape.cols) +
                ") does not match the model (" + std::to_string(it->second.rows) + "," +
                std::to_string(it->second.cols) + ")");
  }

  const std::string blob = detail::read_file(dir / manifest.at("tensors_file").get<std::string>());
  require(blob.size() == manifest.at("tensors_bytes").get<std::size_t>(), ErrorCode::truncated,
          "tensors.bin is " + std::to_string(blob.size()) + " bytes, manifest says " +
              std::to_string(manifest.at("tensors_bytes").get<std::size_t>()));

  ck.params = ParamStore<T>(expected);
  ck.adam.m = ParamStore<T>(expected);
  ck.adam.v = ParamStore<T>(expected);
  for (const auto& t : tensors) {
    const std::string name = t.at("name").get<std::string>();
    const std::string role = t.at("role").get<std::string>();
    const Precision dtype = parse_precision(t.at("dtype").get<std::string>());
    const auto offset = t.at("offset").get<std::size_t>();
    const auto bytes = t.at("bytes").get<std::size_t>();
    require(offset + bytes <= blob.size(), ErrorCode::truncated, name + ": tensor data past end of tensors.bin");
    Mat<T>& dst = role == "param" ? ck.params[name] : role == "adam_m" ? ck.adam.m[name] : ck.adam.v[name];
    const std::size_t count = static_cast<std::size_t>(dst.size());
    const std::size_t width = dtype == Precision::float32 ? 4 : 8;
    require(bytes == count * width, ErrorCode::shape_mismatch, name + ": byte length does not match shape");
    if (dtype == Precision::float32) {
      std::vector<float> tmp(count);
      std::memcpy(tmp.data(), blob.data() + offset, bytes);
      for (std::size_t i = 0; i < count; ++i) dst.data()[i] = static_cast<T>(tmp[i]);
    } else {
      std::vector<double> tmp(count);
      std::memcpy(tmp.data(), blob.data() + offset, bytes);
      for (std::size_t i = 0; i < count; ++i) dst.data()[i] = static_cast<T>(tmp[i]);
    }
  }
  return ck;
}

/// Reads only the stored precision, so callers can pick the matching template.
inline Precision checkpoint_precision(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(detail::read_file(dir / "checkpoint.json"));
  return parse_precision(manifest.at("dtype").get<std::string>());
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification

struct GradCheckEntry {
  std::string name;
  int checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> arrays;
  double max_rel_error = 0.0;
  std::string worst_array;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : arrays)
      arr.push_back({{"name", e.name}, {"checked", e.checked}, {"max_rel_error", e.max_rel_error},
                     {"max_abs_error", e.max_abs_error}});
    return {{"max_rel_error", max_rel_error}, {"worst_array", worst_array}, {"arrays", arr}};
  }
};

struct GradCheckOptions {
  double step = 1e-5;
  int coords_per_array = 4;
  std::uint64_t seed = 0;
  /// Denominator floor: |a - n| / max(|a|, |n|, floor). Coordinates whose true
  /// gradient is exactly zero are then judged on absolute error.
  double floor = 1e-5;
  std::function<bool(const std::string&)> select = [](const std::string&) { return true; };
};

/// Central differences on a random coordinate subset of every selected array.
inline GradCheckReport grad_check(ParamStore<double>& params, const ParamStore<double>& analytic,
                                  const std::function<double()>& loss, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  Rng rng(mix_seed(opt.seed, 0x6C));
  for (auto& [name, m] : params) {
    if (!opt.select(name)) continue;
    GradCheckEntry e{name, 0, 0.0, 0.0};
    const Mat<double>& a = analytic[name];
    const auto total = static_cast<std::uint64_t>(m.size());
    const int count = static_cast<int>(std::min<std::uint64_t>(total, static_cast<std::uint64_t>(opt.coords_per_array)));
    for (int k = 0; k < count; ++k) {
      const auto i = static_cast<Eigen::Index>(count == static_cast<int>(total) ? static_cast<std::uint64_t>(k)
                                                                               : rng.below(total));
      const double old = m.data()[i];
      m.data()[i] = old + opt.step;
      const double up = loss();
      m.data()[i] = old - opt.step;
      const double down = loss();
      m.data()[i] = old;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double an = a.data()[i];
      const double abs_err = std::abs(numeric - an);
      const double rel = abs_err / std::max({std::abs(numeric), std::abs(an), opt.floor});
      e.max_abs_error = std::max(e.max_abs_error, abs_err);
      e.max_rel_error = std::max(e.max_rel_error, rel);
      ++e.checked;
    }
    if (e.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = e.max_rel_error;
      report.worst_array = name;
    }
    report.arrays.push_back(std::move(e));
  }
  return report;
}

/// Probe loss: mean total loss over `probe`, float64.
inline GradCheckReport grad_check_model(MultimodalModel<double>& model, const std::vector<Example>& probe,
                                        bool with_explanation, const GradCheckOptions& opt = {},
                                        const std::function<void(ParamStore<double>&)>& corrupt = {}) {
  require(!probe.empty(), ErrorCode::invalid_argument, "grad_check needs a probe batch");
  ParamStore<double> grads = model.params().zeros_like();
  const double scale = 1.0 / static_cast<double>(probe.size());
  for (const auto& ex : probe) model.loss(ex, with_explanation, &grads, scale);
  if (corrupt) corrupt(grads);
  auto loss = [&] {
    double s = 0.0;
    for (const auto& ex : probe) s += model.loss(ex, with_explanation).total;
    return s * scale;
  };
  return grad_check(model.params(), grads, loss, opt);
}

}  // namespace mmx
