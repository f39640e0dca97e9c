// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria.
//
//   acceptance --workdir DIR [--only 1,3,...] [--overfit-lr X]

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "mmx/pipeline.hpp"
#include "oracles/beam_fixture.hpp"
#include "oracles/bleu_cases.hpp"

using namespace mmx;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and sizes.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradBudgetS = 300;
constexpr int kOverfitSamples = 64;
constexpr int kOverfitMaxEpochs = 300;
constexpr double kOverfitLoss = 0.02;
constexpr double kOverfitBudgetS = 900;
constexpr double kOverfitLearningRate = 1e-4;  // same rate as the default schedule
constexpr int kSmoothingWindow = 10;
constexpr int kGeneralizationSamples = 2000;
constexpr double kGeneralizationAccuracy = 0.95;
constexpr double kAblationGap = 0.01;
constexpr int kRedLightScenes = 20;
constexpr double kBleuTolerance = 1e-9;
constexpr int kGreedyDraws = 100;
constexpr int kIdentitySets = 1000;
constexpr double kRowSumTolerance = 1e-6;
constexpr std::uint64_t kSeed = 7;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct ToyData {
  Vocabulary vocab;
  SensorStats stats;
  std::vector<Example> examples;
};

ToyData toy_data(int n, std::uint64_t seed) {
  ToyData d;
  const auto samples = generate_samples(n, seed, default_distribution(), RenderConfig{});
  std::vector<std::string> corpus;
  std::vector<SensorReading> sensors;
  for (const auto& s : samples) {
    corpus.push_back(s.description);
    corpus.push_back(s.explanation);
    sensors.push_back(s.sensor);
  }
  d.vocab = build_vocab(corpus);
  d.stats = fit_sensor_stats(sensors);
  for (const auto& s : samples) d.examples.push_back(prepare_example(s, d.stats, d.vocab, kDefaultMaxLen));
  return d;
}

// 1. Analytic gradients of the joint loss against float64 central differences.
Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const ToyData d = toy_data(20, kSeed);
  auto model = MultimodalModel<double>::initialized(ModelConfig::toy(d.vocab.size()), kSeed);
  GradCheckOptions opt;
  opt.step = kGradStep;
  opt.seed = kSeed;
  const auto r = grad_check_model(model, {d.examples[0], d.examples[1]}, true, opt);
  const double s = seconds_since(t0);
  const bool every = r.arrays.size() == model.params().array_count();
  return {every && r.passed(kGradTolerance) && s < kGradBudgetS,
          fmt("%zu arrays, max rel error %.3e in %s (tol %.0e), %.1f s (budget %.0f s)", r.arrays.size(),
              r.max_rel_error, r.worst_array.c_str(), kGradTolerance, s, kGradBudgetS)};
}

// 2. Overfitting a small training set.
Outcome overfit(double lr) {
  const auto t0 = std::chrono::steady_clock::now();
  const ToyData d = toy_data(kOverfitSamples, kSeed);
  TrainConfig c;
  c.learning_rate = lr;
  c.epochs = kOverfitMaxEpochs;
  c.shuffle_seed = kSeed;
  ModelConfig m = ModelConfig::toy(d.vocab.size());
  m.seed = kSeed;
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& e) {
    return !(e.train_loss < kOverfitLoss && e.train_accuracy == 1.0);
  };
  const auto r = train<float>(m, c, d.examples, {}, d.vocab, d.stats, hooks);
  const EpochRecord& last = r.log.epochs.back();
  const double s = seconds_since(t0);
  // Reported only: means over consecutive 10-iteration windows.
  std::vector<double> windows;
  for (std::size_t i = 0; i + kSmoothingWindow <= r.log.iterations.size(); i += kSmoothingWindow) {
    double sum = 0;
    for (int k = 0; k < kSmoothingWindow; ++k) sum += r.log.iterations[i + static_cast<std::size_t>(k)].total;
    windows.push_back(sum / kSmoothingWindow);
  }
  int rises = 0;
  for (std::size_t i = 1; i < windows.size(); ++i) rises += windows[i] > windows[i - 1];
  return {last.train_loss < kOverfitLoss && last.train_accuracy == 1.0 && s < kOverfitBudgetS,
          fmt("epoch %d: train loss %.4f (< %.2f), train accuracy %.4f, lr %.0e, %.0f s (budget %.0f s); "
              "10-iteration window means rose %d of %zu times, first %.3f last %.4f",
              last.epoch, last.train_loss, kOverfitLoss, last.train_accuracy, lr, s, kOverfitBudgetS, rises,
              windows.size() - 1, windows.front(), windows.back())};
}

// 3 and 4 share one ablation run; "full" is the generalization run.
struct AblationRun {
  std::vector<AblationResult> rows;
  double seconds = 0;
};

AblationRun run_table(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = generate_samples(kGeneralizationSamples, kSeed, default_distribution(), RenderConfig{});
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  const PreparedData data = prepare_data(samples, split_ids(ids, kSeed), kDefaultMaxLen);
  ModelConfig m;
  m.seed = kSeed;
  TrainConfig t;  // Adam 1e-4, weight decay 1e-5, batch 4, 5 epochs
  t.shuffle_seed = kSeed;
  AblationHooks hooks;
  hooks.on_result = [](const AblationResult& r) {
    std::cout << "  ablation " << r.name << ": " << (r.failed ? "failed: " + r.error : fmt("%.4f", r.accuracy))
              << std::endl;
  };
  std::cout << fmt("  split %zu/%zu/%zu", data.train.size(), data.val.size(), data.test.size()) << std::endl;
  const fs::path out = work / "ablation";
  AblationRun run{run_ablation<float>(data, m, t, &out, hooks), 0};
  run.seconds = seconds_since(t0);
  detail::write_file(work / "ablation.csv", ablation_csv(run.rows));
  return run;
}

const AblationResult* row(const AblationRun& run, const std::string& name) {
  for (const auto& r : run.rows)
    if (r.name == name) return &r;
  return nullptr;
}

// Also runs the trained checkpoint on fresh red-light scenes through the explain path.
Outcome generalization(const AblationRun& run, const fs::path& work) {
  const AblationResult* full = row(run, "full");
  if (!full || full->failed) return {false, full ? "full run failed: " + full->error : "no full row"};
  const auto ck = load_checkpoint<float>(work / "ablation" / "full" / "checkpoint");
  int stops = 0;
  std::string example;
  for (std::uint64_t seed = 0; seed < kRedLightScenes; ++seed) {
    const Sample s = generate_scenario(ScenarioSpec::sample(ScenarioKind::traffic_light_red, 90000 + seed), {});
    const ExplainRecord r = explain_sample(ck, s);
    stops += r.action == std::string("stop");
    if (seed == 0) example = r.explanation;
  }
  return {full->accuracy >= kGeneralizationAccuracy && stops == kRedLightScenes,
          fmt("test accuracy %.4f (>= %.2f), BLEU-4 %.4f; red light -> stop on %d/%d fresh scenes (\"%s\")",
              full->accuracy, kGeneralizationAccuracy, full->bleu4.value_or(0.0), stops, kRedLightScenes,
              example.c_str())};
}

Outcome ablation_order(const AblationRun& run) {
  for (const auto& r : run.rows)
    if (r.failed) return {false, r.name + " failed: " + r.error};
  const double full = row(run, "full")->accuracy;
  const double wo_video = row(run, "wo_video")->accuracy;
  bool pass = true;
  std::ostringstream out;
  for (const char* other : {"wo_sensor", "wo_text", "simple_concat"}) {
    const double a = row(run, other)->accuracy;
    const double gap = full - a;
    const char* verdict = gap >= kAblationGap ? "gap" : gap >= 0 ? "tie" : "WORSE";
    pass = pass && gap >= 0;
    out << fmt("full-%s %+.4f (%s); ", other, gap, verdict);
  }
  for (const auto& r : run.rows) {
    if (r.name == "wo_video") continue;
    const double gap = r.accuracy - wo_video;
    pass = pass && gap >= kAblationGap;
    out << fmt("%s-wo_video %+.4f; ", r.name.c_str(), gap);
  }
  out << fmt("%.0f s", run.seconds);
  return {pass, out.str()};
}

// 5. BLEU against the frozen oracle.
Outcome bleu_oracle() {
  double worst = 0;
  std::vector<std::string> hyps, refs;
  for (const auto& c : mmx::testing::kBleuCases) {
    const auto r = bleu4({c.hyp}, {c.ref});
    worst = std::max({worst, std::abs(r.corpus - c.corpus), std::abs(r.sentences[0] - c.smoothed)});
    hyps.push_back(c.hyp);
    refs.push_back(c.ref);
  }
  const double corpus_err = std::abs(bleu4(hyps, refs).corpus - mmx::testing::kBleuCorpus);
  const double self = bleu4(refs, refs).corpus;
  const double disjoint = bleu4({"stop at the red light"}, {"stop because the light is red"}).corpus;
  return {std::max(worst, corpus_err) < kBleuTolerance && self == 1.0 && disjoint == 0.0,
          fmt("10 pairs max error %.1e, corpus error %.1e (tol %.0e), bleu(x,x) %.6f, no 4-gram overlap %.6f",
              worst, corpus_err, kBleuTolerance, self, disjoint)};
}

// 6. Beam search against exhaustive enumeration and greedy decoding.
Outcome beam_oracle() {
  using namespace mmx::testing;
  int enumerated = 0, agree = 0;
  std::vector<NextTokenFn> fixtures{hand_table()};
  for (std::uint64_t s = 0; s < 100; ++s) fixtures.push_back(TableDecoder{s});
  for (const auto& next : fixtures) {
    ++enumerated;
    agree += beam_search(next, {5, 3, 0, 3}).tokens == exhaustive_best(next, 0, 3).tokens;
  }
  const ToyData d = toy_data(20, kSeed);
  const ModelConfig cfg = ModelConfig::toy(d.vocab.size());
  const ExplanationDecoder dec(cfg);
  int greedy = 0;
  Rng rng(kSeed);
  for (int draw = 0; draw < kGreedyDraws; ++draw) {
    const auto p = init_params<double>(cfg, static_cast<std::uint64_t>(draw));
    Row<double> f(cfg.fused_dim);
    for (int i = 0; i < f.size(); ++i) f(i) = rng.uniform(-1, 1);
    const Row<double> cond = dec.condition(p, f);
    const NextTokenFn next = [&](std::span<const int> prefix) { return dec.next_log_probs(p, cond, prefix); };
    greedy += beam_search(next, {1, cfg.max_len, token::bos, token::eos}).tokens ==
              greedy_decode(next, token::bos, token::eos, cfg.max_len).tokens;
  }
  return {agree == enumerated && greedy == kGreedyDraws,
          fmt("beams=5 equals enumeration on %d/%d fixtures; beams=1 equals greedy on %d/%d draws", agree,
              enumerated, greedy, kGreedyDraws)};
}

// 7. Accuracy and confusion-matrix identities.
Outcome metric_identities() {
  Rng rng(kSeed);
  int exact = 0;
  double worst_row = 0;
  for (int t = 0; t < kIdentitySets; ++t) {
    const int n = 1 + static_cast<int>(rng.below(500));
    std::vector<int> p(static_cast<std::size_t>(n)), l(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      p[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(kActionCount));
      l[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(kActionCount));
    }
    const ConfusionMatrix m = confusion(p, l);
    exact += accuracy(p, l) == static_cast<double>(m.trace()) / static_cast<double>(m.total());
    const auto norm = m.normalized();
    for (int r = 0; r < kActionCount; ++r) {
      if (m.row_empty(r)) continue;
      double s = 0;
      for (double x : norm[r]) s += x;
      worst_row = std::max(worst_row, std::abs(s - 100.0));
    }
  }
  return {exact == kIdentitySets && worst_row <= kRowSumTolerance,
          fmt("accuracy == trace/total on %d/%d sets; worst row sum deviation %.1e (tol %.0e)", exact,
              kIdentitySets, worst_row, kRowSumTolerance)};
}

// 8. Identical seeds give identical metrics.json; checkpoints reload bit-exactly.
Outcome determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  generate_dataset(60, kSeed, default_distribution(), RenderConfig{}, dir / "data");
  TrainConfig t;
  t.epochs = 1;
  t.learning_rate = 1e-3;
  t.shuffle_seed = kSeed;
  t.precision = Precision::float64;
  ModelConfig m;
  m.seed = kSeed;
  std::string metrics[2];
  std::optional<RunResult<double>> first;
  for (int run = 0; run < 2; ++run) {
    const PreparedData data = prepare_data(dir / "data", kSeed, m.max_len);
    auto r = train_and_evaluate<double>(data, m, t);
    r.test.dataset_fingerprint = data.dataset_fingerprint;
    const fs::path out = dir / ("run" + std::to_string(run));
    write_run(r, out);
    metrics[run] = detail::read_file(out / "metrics.json");
    if (run == 0) first = std::move(r);
  }
  const Checkpoint<double>& trained = first->trained.best;
  const auto loaded = load_checkpoint<double>(dir / "run0" / "checkpoint");
  const PreparedData data = prepare_data(dir / "data", kSeed, m.max_len);
  const MultimodalModel<double> before(trained.model, trained.params), after(loaded.model, loaded.params);
  int same = 0;
  for (const auto& ex : data.test) {
    const auto pa = before.predict(ex, true, t.eval_beams);
    const auto pb = after.predict(ex, true, t.eval_beams);
    same += pa.action.logits == pb.action.logits && pa.fused.values == pb.fused.values &&
            pa.explanation_ids == pb.explanation_ids;
  }
  save_checkpoint(loaded, dir / "resaved");
  const bool reload = loaded.params == trained.params &&
                      detail::read_file(dir / "resaved" / "tensors.bin") ==
                          detail::read_file(dir / "run0" / "checkpoint" / "tensors.bin");
  const bool identical = metrics[0] == metrics[1];
  return {identical && reload && same == static_cast<int>(data.test.size()),
          fmt("metrics.json %s (%zu bytes); reloaded forward outputs identical on %d/%zu test samples; "
              "re-saved tensors %s",
              identical ? "byte-identical" : "DIFFERS", metrics[0].size(), same, data.test.size(),
              reload ? "identical" : "DIFFER")};
}

// 9. Full-size widths.
Outcome shape_contract() {
  const ModelConfig cfg = ModelConfig::full_scale(100);
  const Fusion f(cfg);
  ParamShapes shapes;
  f.declare(shapes);
  ParamStore<float> p(shapes);
  const Row<float> v = Row<float>::Ones(cfg.video_dim), s = Row<float>::Ones(cfg.sensor_dim),
                   t = Row<float>::Ones(cfg.text_dim);
  FusionTrace<float> tr;
  const auto out = f.forward(p, &v, &s, &t, &tr);
  const bool pass = f.concat_dim() == 1664 && tr.concat.cols() == 1664 && f.output_dim() == 768 &&
                    out.values.cols() == 768 && shapes.at("fusion.weight") == Shape{1664, 768};
  return {pass, fmt("concat width %d, fused width %d", static_cast<int>(tr.concat.cols()),
                    static_cast<int>(out.values.cols()))};
}

// 10. Class counts of a 1,000-sample dataset.
Outcome distribution(const fs::path& work) {
  const fs::path dir = work / "distribution";
  fs::remove_all(dir);
  const DatasetManifest m = generate_dataset(1000, kSeed, default_distribution(), RenderConfig{16, {}}, dir);
  ClassCounts counted{};
  for (const auto& r : m.records) ++counted[static_cast<std::size_t>(r.action)];
  fs::remove_all(dir);
  // Listed as stop, decelerate, accelerate, turn_left, turn_right.
  const std::pair<ActionLabel, int> expected[] = {{ActionLabel::stop, 250},
                                                  {ActionLabel::decelerate, 250},
                                                  {ActionLabel::accelerate, 200},
                                                  {ActionLabel::turn_left, 150},
                                                  {ActionLabel::turn_right, 150}};
  bool pass = true;
  std::string detail = "counts";
  for (const auto& [label, want] : expected) {
    const auto i = static_cast<std::size_t>(label);
    pass = pass && counted[i] == want && m.counts[i] == want;
    detail += fmt(" %s %d (%d)", action_name(label), counted[i], want);
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  double overfit_lr = kOverfitLearningRate;
  app.add_option("--workdir", workdir, "Scratch directory");
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_option("--overfit-lr", overfit_lr, "Learning rate for criterion 2");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = workdir;
  fs::create_directories(work);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int n) { return selected.empty() || selected.count(n) != 0; };

  std::optional<AblationRun> table;
  auto ablation = [&]() -> const AblationRun& {
    if (!table) table = run_table(work);
    return *table;
  };

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient check", gradient_suite},
      {"overfit", [&] { return overfit(overfit_lr); }},
      {"generalization", [&] { return generalization(ablation(), work); }},
      {"ablation ordering", [&] { return ablation_order(ablation()); }},
      {"bleu oracle", bleu_oracle},
      {"beam oracle", beam_oracle},
      {"metric identities", metric_identities},
      {"determinism", [&] { return determinism(work); }},
      {"shape contract", shape_contract},
      {"dataset distribution", [&] { return distribution(work); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << n << " (" << criteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail << std::endl;
  }
  return failures;
}
