#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mmx/error.hpp"
#include "mmx/preprocess.hpp"
#include "mmx/synthdata.hpp"

namespace mmx {

inline double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  require(predictions.size() == labels.size(), ErrorCode::invalid_argument,
          "accuracy: " + std::to_string(predictions.size()) + " predictions for " + std::to_string(labels.size()) +
              " labels");
  require(!labels.empty(), ErrorCode::invalid_argument, "accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// BLEU-4

struct NgramStats {
  std::array<std::int64_t, 4> matches{};
  std::array<std::int64_t, 4> totals{};
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;

  NgramStats& operator+=(const NgramStats& o) {
    for (int n = 0; n < 4; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    return *this;
  }
};

/// Clipped n-gram matches for n = 1..4.
inline NgramStats ngram_stats(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  NgramStats s;
  s.hyp_len = static_cast<std::int64_t>(hyp.size());
  s.ref_len = static_cast<std::int64_t>(ref.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, std::int64_t> ref_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
    std::map<std::vector<std::string>, std::int64_t> hyp_counts;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[{hyp.begin() + i, hyp.begin() + i + n}];
    for (const auto& [gram, c] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) s.matches[n - 1] += std::min(c, it->second);
      s.totals[n - 1] += c;
    }
  }
  return s;
}

inline double brevity_penalty(std::int64_t hyp_len, std::int64_t ref_len) {
  if (hyp_len >= ref_len) return 1.0;
  if (hyp_len == 0) return 0.0;
  return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
}

/// Unsmoothed: any zero precision gives 0.
inline double bleu_from_stats(const NgramStats& s) {
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (s.matches[n] == 0 || s.totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
  }
  return brevity_penalty(s.hyp_len, s.ref_len) * std::exp(log_sum / 4.0);
}

/// Zero numerators become 1 / (total + 1).
inline double smoothed_bleu_from_stats(const NgramStats& s) {
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    const double p = s.matches[n] > 0 ? static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n])
                                       : 1.0 / static_cast<double>(s.totals[n] + 1);
    log_sum += std::log(p);
  }
  return brevity_penalty(s.hyp_len, s.ref_len) * std::exp(log_sum / 4.0);
}

struct BleuResult {
  double corpus = 0.0;
  std::vector<double> sentences;  // smoothed per-pair scores
  NgramStats stats;
};

/// Texts are split with the same word splitter as the tokenizer.
inline BleuResult bleu4(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  require(!hypotheses.empty(), ErrorCode::invalid_argument, "bleu4: empty hypothesis set");
  require(hypotheses.size() == references.size(), ErrorCode::invalid_argument,
          "bleu4: hypothesis and reference counts differ");
  BleuResult r;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const NgramStats s = ngram_stats(split_words(hypotheses[i]), split_words(references[i]));
    r.stats += s;
    r.sentences.push_back(smoothed_bleu_from_stats(s));
  }
  r.corpus = bleu_from_stats(r.stats);
  return r;
}

// ---------------------------------------------------------------------------
// Confusion matrix and class distribution

struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kActionCount>, kActionCount> counts{};  // [truth][prediction]

  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto& row : counts)
      for (auto c : row) t += c;
    return t;
  }
  std::int64_t trace() const {
    std::int64_t t = 0;
    for (int i = 0; i < kActionCount; ++i) t += counts[i][i];
    return t;
  }
  std::int64_t row_sum(int r) const {
    std::int64_t t = 0;
    for (auto c : counts[r]) t += c;
    return t;
  }
  bool row_empty(int r) const { return row_sum(r) == 0; }

  /// Row percentages; empty rows stay zero.
  std::array<std::array<double, kActionCount>, kActionCount> normalized() const {
    std::array<std::array<double, kActionCount>, kActionCount> out{};
    for (int r = 0; r < kActionCount; ++r) {
      const std::int64_t s = row_sum(r);
      if (s == 0) continue;
      for (int c = 0; c < kActionCount; ++c)
        out[r][c] = 100.0 * static_cast<double>(counts[r][c]) / static_cast<double>(s);
    }
    return out;
  }

  double accuracy() const { return static_cast<double>(trace()) / static_cast<double>(total()); }
};

inline ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
  require(predictions.size() == labels.size(), ErrorCode::invalid_argument, "confusion: length mismatch");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < kActionCount && predictions[i] >= 0 && predictions[i] < kActionCount,
            ErrorCode::invalid_argument, "confusion: class index out of range");
    ++m.counts[labels[i]][predictions[i]];
  }
  return m;
}

inline std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "truth";
  for (int c = 0; c < kActionCount; ++c) out << "," << kActionNames[c];
  out << ",count,empty\n";
  const auto norm = m.normalized();
  char buf[32];
  for (int r = 0; r < kActionCount; ++r) {
    out << kActionNames[r];
    for (int c = 0; c < kActionCount; ++c) {
      std::snprintf(buf, sizeof buf, "%.6f", norm[r][c]);
      out << "," << buf;
    }
    out << "," << m.row_sum(r) << "," << (m.row_empty(r) ? 1 : 0) << "\n";
  }
  return out.str();
}

/// Binary graymap, one `cell`-pixel square per entry; white = 0%, black = 100%.
inline std::string confusion_pgm(const ConfusionMatrix& m, int cell = 32) {
  require(cell > 0, ErrorCode::invalid_argument, "cell size must be positive");
  const int side = cell * kActionCount;
  std::string out = "P5\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  const auto norm = m.normalized();
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double pct = norm[y / cell][x / cell];
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (1.0 - pct / 100.0)))));
    }
  return out;
}

struct ActionDistributionReport {
  std::array<std::int64_t, kActionCount> counts{};
  std::array<double, kActionCount> fractions{};
};

inline ActionDistributionReport action_distribution(std::span<const int> labels) {
  require(!labels.empty(), ErrorCode::invalid_argument, "action_distribution: empty input");
  ActionDistributionReport r;
  for (int l : labels) {
    require(l >= 0 && l < kActionCount, ErrorCode::invalid_argument, "action_distribution: class out of range");
    ++r.counts[l];
  }
  for (int c = 0; c < kActionCount; ++c)
    r.fractions[c] = static_cast<double>(r.counts[c]) / static_cast<double>(labels.size());
  return r;
}

inline std::string distribution_csv(const ActionDistributionReport& d) {
  std::ostringstream out;
  out << "action,count,fraction\n";
  char buf[32];
  for (int c = 0; c < kActionCount; ++c) {
    std::snprintf(buf, sizeof buf, "%.6f", d.fractions[c]);
    out << kActionNames[c] << "," << d.counts[c] << "," << buf << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Report

struct MetricsReport {
  double accuracy = 0.0;
  std::optional<double> bleu4_corpus;
  std::vector<double> bleu4_sentences;
  ConfusionMatrix confusion;
  ActionDistributionReport distribution;  // of the ground-truth labels
  std::string config_fingerprint;
  std::string dataset_fingerprint;

  /// nlohmann::json objects keep keys sorted, so dump() is canonical.
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["accuracy"] = accuracy;
    j["bleu4_corpus"] = bleu4_corpus ? nlohmann::json(*bleu4_corpus) : nlohmann::json(nullptr);
    j["bleu4_sentences"] = bleu4_sentences;
    nlohmann::json counts = nlohmann::json::array();
    nlohmann::json pct = nlohmann::json::array();
    const auto norm = confusion.normalized();
    for (int r = 0; r < kActionCount; ++r) {
      counts.push_back(confusion.counts[r]);
      pct.push_back(norm[r]);
    }
    nlohmann::json empty = nlohmann::json::array();
    for (int r = 0; r < kActionCount; ++r)
      if (confusion.row_empty(r)) empty.push_back(kActionNames[r]);
    j["confusion"] = {{"classes", kActionNames}, {"counts", counts}, {"normalized_percent", pct}, {"empty_rows", empty}};
    nlohmann::json dist;
    for (int c = 0; c < kActionCount; ++c)
      dist[kActionNames[c]] = {{"count", distribution.counts[c]}, {"fraction", distribution.fractions[c]}};
    j["action_distribution"] = dist;
    j["config_fingerprint"] = config_fingerprint;
    j["dataset_fingerprint"] = dataset_fingerprint;
    return j;
  }
};

inline MetricsReport make_report(std::span<const int> predictions, std::span<const int> labels,
                                 const std::vector<std::string>* hypotheses,
                                 const std::vector<std::string>* references) {
  MetricsReport r;
  r.accuracy = accuracy(predictions, labels);
  r.confusion = confusion(predictions, labels);
  r.distribution = action_distribution(labels);
  if (hypotheses && references && !hypotheses->empty()) {
    BleuResult b = bleu4(*hypotheses, *references);
    r.bleu4_corpus = b.corpus;
    r.bleu4_sentences = std::move(b.sentences);
  }
  return r;
}

/// Writes metrics.json, confusion.csv, confusion.pgm and distribution.csv.
inline void write_report(const MetricsReport& r, const std::filesystem::path& dir) {
  detail::ensure_dir(dir);
  detail::write_file(dir / "metrics.json", r.to_json().dump(2) + "\n");
  detail::write_file(dir / "confusion.csv", confusion_csv(r.confusion));
  detail::write_file(dir / "confusion.pgm", confusion_pgm(r.confusion));
  detail::write_file(dir / "distribution.csv", distribution_csv(r.distribution));
}

}  // namespace mmx
