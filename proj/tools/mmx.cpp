// Command-line driver: gen-data, split, train, eval, ablate, explain, grad-check, report.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "mmx/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mmx;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides every seed in the config");
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_flag("-q,--quiet", c.quiet, "no progress output");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig e = load_experiment(c.config);
  if (c.seed) e.apply_seed(*c.seed);
  return e;
}

void log_epoch(const Common& c, const std::string& tag, const EpochRecord& e) {
  if (c.quiet) return;
  std::fprintf(stderr, "%s epoch %d  loss %.5f  train_acc %.4f  val_acc %.4f  val_bleu4 %s  (%.1fs)\n", tag.c_str(),
               e.epoch, e.train_loss, e.train_accuracy, e.val_accuracy,
               e.val_bleu4 ? std::to_string(*e.val_bleu4).c_str() : "n/a", e.wall_clock_s);
}

template <class T>
int do_train(const Common& c, const ExperimentConfig& e) {
  const PreparedData data = prepare_data(e.data_dir, e.split_seed, e.model.max_len);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) { return log_epoch(c, "train", r), true; };
  const RunResult<T> r = train_and_evaluate<T>(data, e.model, e.train, hooks);
  MetricsReport report = r.test;
  report.config_fingerprint = config_fingerprint(to_json(e));
  report.dataset_fingerprint = data.dataset_fingerprint;
  write_run(RunResult<T>{r.trained, report}, c.out);
  write_run_manifest(c.out, "train", to_json(e), data.dataset_fingerprint,
                     {{"split", to_json(data.split)}, {"sensor_stats", to_json(data.stats)},
                      {"vocab_fingerprint", data.vocab.fingerprint()}, {"best_epoch", r.trained.best.epoch}});
  std::printf("test accuracy %.6f  bleu4 %s  (best epoch %d)\n", report.accuracy,
              report.bleu4_corpus ? std::to_string(*report.bleu4_corpus).c_str() : "n/a", r.trained.best.epoch);
  return 0;
}

template <class T>
int do_eval(const Common& c, const ExperimentConfig& e, const fs::path& checkpoint) {
  const Checkpoint<T> ck = load_checkpoint<T>(checkpoint);
  const DatasetManifest manifest = read_manifest(e.data_dir);
  const SplitAssignment split = split_dataset(manifest, e.split_seed);
  const std::vector<Sample> samples = load_dataset(e.data_dir);
  std::vector<Example> test;
  for (const auto& s : samples)
    if (std::find(split.test.begin(), split.test.end(), s.id) != split.test.end())
      test.push_back(prepare_example(s, ck.stats, ck.vocab, ck.model.max_len));
  const MultimodalModel<T> model(ck.model, ck.params);
  MetricsReport report = evaluate_examples(model, test, ck.vocab, ck.train.explanation_loss, ck.model.beams);
  report.config_fingerprint = config_fingerprint(to_json(e));
  report.dataset_fingerprint = dataset_fingerprint(e.data_dir);
  write_report(report, c.out);
  write_run_manifest(c.out, "eval", to_json(e), report.dataset_fingerprint, {{"checkpoint", checkpoint.string()}});
  std::printf("test accuracy %.6f  bleu4 %s\n", report.accuracy,
              report.bleu4_corpus ? std::to_string(*report.bleu4_corpus).c_str() : "n/a");
  return 0;
}

template <class T>
int do_ablate(const Common& c, const ExperimentConfig& e) {
  const PreparedData data = prepare_data(e.data_dir, e.split_seed, e.model.max_len);
  const fs::path out = c.out;
  AblationHooks hooks;
  hooks.on_epoch = [&](const std::string& name, const EpochRecord& r) { log_epoch(c, name, r); };
  hooks.on_result = [&](const AblationResult& r) {
    if (!c.quiet) std::fprintf(stderr, "%s done: accuracy %.4f%s\n", r.name.c_str(), r.accuracy, r.failed ? " FAILED" : "");
  };
  const auto rows = run_ablation<T>(data, e.model, e.train, &out, hooks);
  detail::write_file(out / "ablation.csv", ablation_csv(rows));
  detail::write_file(out / "ablation.json", to_json(rows).dump(2) + "\n");
  write_run_manifest(out, "ablate", to_json(e), data.dataset_fingerprint);
  std::cout << ablation_csv(rows);
  bool any_failed = false;
  for (const auto& r : rows) any_failed = any_failed || r.failed;
  return any_failed ? 1 : 0;
}

template <class T>
int do_explain(const Common& c, const ExperimentConfig& e, const fs::path& checkpoint, const std::string& id,
               bool attention) {
  const Checkpoint<T> ck = load_checkpoint<T>(checkpoint);
  const DatasetManifest manifest = read_manifest(e.data_dir);
  const auto it = std::find_if(manifest.records.begin(), manifest.records.end(),
                               [&](const DatasetRecord& r) { return r.id == id; });
  require(it != manifest.records.end(), ErrorCode::invalid_argument, "no sample " + id + " in " + e.data_dir.string());
  const Sample s = load_record(e.data_dir, *it);
  ExplainOptions opt;
  opt.beams = ck.model.beams;
  const fs::path run_manifest = checkpoint.parent_path() / "run_manifest.json";
  if (fs::exists(run_manifest)) {
    const auto rm = nlohmann::json::parse(detail::read_file(run_manifest));
    if (rm.contains("vocab_fingerprint")) opt.expected_vocab_fingerprint = rm.at("vocab_fingerprint");
    if (rm.contains("sensor_stats")) opt.expected_stats_fingerprint = stats_fingerprint(sensor_stats_from_json(rm.at("sensor_stats")));
  }
  if (attention) opt.attention_dir = fs::path(c.out);
  const ExplainRecord r = explain_sample(ck, s, opt);
  detail::ensure_dir(c.out);
  detail::write_file(fs::path(c.out) / "explain.json", r.to_json().dump(2) + "\n");
  write_run_manifest(c.out, "explain", to_json(e), dataset_fingerprint(e.data_dir),
                     {{"checkpoint", checkpoint.string()}, {"sample", id}});
  std::cout << r.to_json().dump(2) << "\n";
  return 0;
}

int do_grad_check(const Common& c, const ExperimentConfig& e, int probe_size, int coords, double tolerance) {
  const PreparedData data = prepare_data(e.data_dir, e.split_seed, e.model.max_len);
  ModelConfig cfg = e.model;
  cfg.vocab_size = data.vocab.size();
  MultimodalModel<double> model = MultimodalModel<double>::initialized(cfg, cfg.seed);
  std::vector<Example> probe(data.train.begin(),
                             data.train.begin() + std::min<std::size_t>(data.train.size(), static_cast<std::size_t>(probe_size)));
  GradCheckOptions opt;
  opt.coords_per_array = coords;
  opt.seed = cfg.seed;
  const GradCheckReport report = grad_check_model(model, probe, e.train.explanation_loss, opt);
  nlohmann::json j = report.to_json();
  j["tolerance"] = tolerance;
  j["passed"] = report.passed(tolerance);
  detail::ensure_dir(c.out);
  detail::write_file(fs::path(c.out) / "grad_check.json", j.dump(2) + "\n");
  write_run_manifest(c.out, "grad-check", to_json(e), data.dataset_fingerprint);
  std::printf("max relative error %.3e (%s)  %s\n", report.max_rel_error, report.worst_array.c_str(),
              report.passed(tolerance) ? "PASS" : "FAIL");
  return report.passed(tolerance) ? 0 : 1;
}

int do_report(const Common& c, const ExperimentConfig& e, const std::string& metrics) {
  const DatasetManifest manifest = read_manifest(e.data_dir);
  std::vector<int> labels;
  for (const auto& s : load_dataset(e.data_dir)) labels.push_back(static_cast<int>(s.action));
  const ActionDistributionReport dist = action_distribution(labels);
  detail::ensure_dir(c.out);
  detail::write_file(fs::path(c.out) / "distribution.csv", distribution_csv(dist));
  if (!metrics.empty()) {
    const auto j = nlohmann::json::parse(detail::read_file(metrics));
    ConfusionMatrix m;
    const auto& counts = j.at("confusion").at("counts");
    for (int r = 0; r < kActionCount; ++r)
      for (int k = 0; k < kActionCount; ++k) m.counts[r][k] = counts.at(r).at(k).get<std::int64_t>();
    detail::write_file(fs::path(c.out) / "confusion.csv", confusion_csv(m));
    detail::write_file(fs::path(c.out) / "confusion.pgm", confusion_pgm(m));
  }
  write_run_manifest(c.out, "report", to_json(e), dataset_fingerprint(e.data_dir));
  std::cout << distribution_csv(dist);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal driving-action prediction and explanation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kCodeVersion);

  Common gen_c, split_c, train_c, eval_c, ablate_c, explain_c, gc_c, report_c;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, gen_c);
  auto* split = app.add_subcommand("split", "write the train/val/test assignment");
  add_common(split, split_c);
  auto* train_cmd = app.add_subcommand("train", "train, select the best epoch, evaluate on test");
  add_common(train_cmd, train_c);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, eval_c);
  std::string eval_ckpt;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  auto* ablate = app.add_subcommand("ablate", "retrain each modality / fusion ablation");
  add_common(ablate, ablate_c);
  auto* explain = app.add_subcommand("explain", "predict and explain one sample");
  add_common(explain, explain_c);
  std::string explain_ckpt, explain_id;
  bool explain_attention = false;
  explain->add_option("--checkpoint", explain_ckpt, "checkpoint directory")->required();
  explain->add_option("--sample", explain_id, "sample id")->required();
  explain->add_flag("--attention", explain_attention, "write attention CSVs");
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check in float64");
  add_common(gc, gc_c);
  int gc_probe = 2, gc_coords = 4;
  double gc_tol = 1e-4;
  gc->add_option("--probe", gc_probe, "probe batch size");
  gc->add_option("--coords", gc_coords, "coordinates per array");
  gc->add_option("--tolerance", gc_tol, "max relative error");
  auto* report = app.add_subcommand("report", "class distribution and confusion heatmap");
  add_common(report, report_c);
  std::string report_metrics;
  report->add_option("--metrics", report_metrics, "metrics.json to render");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const ExperimentConfig e = load(gen_c);
      const DatasetManifest m = generate_dataset(e.samples, e.data_seed, e.fractions, e.render, gen_c.out);
      write_run_manifest(gen_c.out, "gen-data", to_json(e), dataset_fingerprint(gen_c.out));
      for (int k = 0; k < kActionCount; ++k) std::printf("%s %d\n", kActionNames[k], m.counts[k]);
      return 0;
    }
    if (split->parsed()) {
      const ExperimentConfig e = load(split_c);
      const SplitAssignment s = split_dataset(read_manifest(e.data_dir), e.split_seed);
      detail::ensure_dir(split_c.out);
      detail::write_file(fs::path(split_c.out) / "split.json", to_json(s).dump(2) + "\n");
      write_run_manifest(split_c.out, "split", to_json(e), dataset_fingerprint(e.data_dir));
      std::printf("train %zu  val %zu  test %zu\n", s.train.size(), s.val.size(), s.test.size());
      return 0;
    }
    if (train_cmd->parsed()) {
      const ExperimentConfig e = load(train_c);
      return e.train.precision == Precision::float32 ? do_train<float>(train_c, e) : do_train<double>(train_c, e);
    }
    if (eval->parsed()) {
      const ExperimentConfig e = load(eval_c);
      return checkpoint_precision(eval_ckpt) == Precision::float32 ? do_eval<float>(eval_c, e, eval_ckpt)
                                                                   : do_eval<double>(eval_c, e, eval_ckpt);
    }
    if (ablate->parsed()) {
      const ExperimentConfig e = load(ablate_c);
      return e.train.precision == Precision::float32 ? do_ablate<float>(ablate_c, e) : do_ablate<double>(ablate_c, e);
    }
    if (explain->parsed()) {
      const ExperimentConfig e = load(explain_c);
      return checkpoint_precision(explain_ckpt) == Precision::float32
                 ? do_explain<float>(explain_c, e, explain_ckpt, explain_id, explain_attention)
                 : do_explain<double>(explain_c, e, explain_ckpt, explain_id, explain_attention);
    }
    if (gc->parsed()) return do_grad_check(gc_c, load(gc_c), gc_probe, gc_coords, gc_tol);
    if (report->parsed()) return do_report(report_c, load(report_c), report_metrics);
  } catch (const Error& err) {
    std::fprintf(stderr, "error [%s]: %s\n", to_string(err.code()), err.what());
    return 2;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  }
  return 0;
}
