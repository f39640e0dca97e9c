#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmx/error.hpp"
#include "mmx/rng.hpp"
#include "mmx/synthdata.hpp"

namespace mmx {

// ---------------------------------------------------------------------------
// Video

/// Real-valued clip in [0, 1], same (frame, y, x, channel) order as VideoClip.
template <class T>
struct NormalizedClip {
  int size = 0;
  std::vector<T> values;

  T at(int f, int y, int x, int c) const {
    return values[((static_cast<std::size_t>(f) * size + y) * size + x) * 3 + c];
  }
};

/// Nearest-neighbour resample to `target` x `target`.
inline VideoClip resize_clip(const VideoClip& clip, int target) {
  if (clip.size == target) return clip;
  require(target > 0, ErrorCode::invalid_argument, "resize target must be positive");
  VideoClip out = VideoClip::blank(target);
  for (int f = 0; f < VideoClip::kFrames; ++f)
    for (int y = 0; y < target; ++y) {
      const int sy = static_cast<int>((static_cast<long long>(y) * clip.size) / target);
      for (int x = 0; x < target; ++x) {
        const int sx = static_cast<int>((static_cast<long long>(x) * clip.size) / target);
        for (int c = 0; c < 3; ++c) out.pixels[out.index(f, y, x, c)] = clip.at(f, sy, sx, c);
      }
    }
  return out;
}

/// Resize (when `target` > 0 and differs) then divide by 255.
template <class T>
NormalizedClip<T> normalize_clip(const VideoClip& clip, int target = 0) {
  require(clip.size > 0 && clip.pixels.size() == VideoClip::byte_count(clip.size),
          ErrorCode::invalid_argument,
          "clip must hold exactly " + std::to_string(VideoClip::kFrames) + " frames");
  if (target > 0 && target != clip.size) return normalize_clip<T>(resize_clip(clip, target));
  NormalizedClip<T> out{clip.size, std::vector<T>(clip.pixels.size())};
  for (std::size_t i = 0; i < clip.pixels.size(); ++i)
    out.values[i] = static_cast<T>(clip.pixels[i]) / static_cast<T>(255);
  return out;
}

// ---------------------------------------------------------------------------
// Sensors

struct SensorStats {
  static constexpr double kStdFloor = 1e-8;
  std::array<double, 3> mean{};
  std::array<double, 3> std{1.0, 1.0, 1.0};
  std::vector<std::string> warnings;
};

/// Per-channel mean and population standard deviation (floored).
inline SensorStats fit_sensor_stats(std::span<const SensorReading> train) {
  require(train.size() >= 2, ErrorCode::invalid_argument,
          "sensor statistics need at least 2 training samples");
  static constexpr std::array<const char*, 3> kNames{"speed", "latitude", "longitude"};
  SensorStats stats;
  const double n = static_cast<double>(train.size());
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (const auto& r : train) sum += r.values()[c];
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& r : train) {
      const double d = r.values()[c] - mean;
      sq += d * d;
    }
    double sd = std::sqrt(sq / n);
    if (!(sd > SensorStats::kStdFloor)) {
      stats.warnings.push_back(std::string("constant sensor channel '") + kNames[c] +
                               "': std floored");
      sd = SensorStats::kStdFloor;
    }
    stats.mean[c] = mean;
    stats.std[c] = sd;
  }
  return stats;
}

inline std::array<double, 3> apply_sensor_norm(const SensorReading& r, const SensorStats& s) {
  std::array<double, 3> out{};
  const auto v = r.values();
  for (std::size_t c = 0; c < 3; ++c) {
    require(std::isfinite(v[c]), ErrorCode::non_finite, "non-finite sensor value");
    out[c] = (v[c] - s.mean[c]) / s.std[c];
  }
  return out;
}

inline SensorReading denormalize_sensor(const std::array<double, 3>& z, const SensorStats& s) {
  return {z[0] * s.std[0] + s.mean[0], z[1] * s.std[1] + s.mean[1], z[2] * s.std[2] + s.mean[2]};
}

inline nlohmann::json to_json(const SensorStats& s) {
  return {{"mean", s.mean}, {"std", s.std}};
}

inline SensorStats sensor_stats_from_json(const nlohmann::json& j) {
  SensorStats s;
  s.mean = j.at("mean").get<std::array<double, 3>>();
  s.std = j.at("std").get<std::array<double, 3>>();
  return s;
}

// ---------------------------------------------------------------------------
// Text

namespace token {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int eos = 2;
inline constexpr int unk = 3;
inline constexpr int cls = 4;
inline constexpr int reserved = 5;
}  // namespace token

inline constexpr int kDefaultMaxLen = 50;

/// Lowercase; whitespace separates, each punctuation character is its own token.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch)) {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return out;
}

class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>", "<bos>", "<eos>", "<unk>", "<cls>"} { reindex(); }

  /// `tokens` must start with the five reserved entries.
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    static const std::array<const char*, token::reserved> kReserved{"<pad>", "<bos>", "<eos>",
                                                                     "<unk>", "<cls>"};
    require(tokens_.size() >= token::reserved, ErrorCode::invalid_argument,
            "vocabulary lacks reserved tokens");
    for (int i = 0; i < token::reserved; ++i)
      require(tokens_[static_cast<std::size_t>(i)] == kReserved[static_cast<std::size_t>(i)],
              ErrorCode::invalid_argument, "reserved token ids are fixed");
    reindex();
    require(index_.size() == tokens_.size(), ErrorCode::invalid_argument,
            "vocabulary has duplicate tokens");
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? token::unk : it->second;
  }

  bool contains(const std::string& tok) const { return index_.count(tok) != 0; }

  const std::string& token_at(int id) const {
    require(id >= 0 && id < size(), ErrorCode::invalid_argument, "token id out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    return j;
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    std::vector<std::string> tokens(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto i = it.value().get<std::size_t>();
      require(i < tokens.size() && tokens[i].empty(), ErrorCode::invalid_argument,
              "vocabulary ids must be a permutation of 0..V-1");
      tokens[i] = it.key();
    }
    return Vocabulary(std::move(tokens));
  }

  std::string fingerprint() const { return hex64(fnv1a64(to_json().dump())); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Tokens with count >= min_count, ordered by count desc then lexicographically.
inline Vocabulary build_vocab(std::span<const std::string> corpus, int min_count = 1) {
  require(!corpus.empty(), ErrorCode::invalid_argument, "cannot build a vocabulary from an empty corpus");
  std::map<std::string, int> counts;
  for (const auto& text : corpus)
    for (auto& w : split_words(text)) ++counts[w];
  std::vector<std::pair<std::string, int>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{"<pad>", "<bos>", "<eos>", "<unk>", "<cls>"};
  for (auto& [w, c] : entries)
    if (c >= min_count) tokens.push_back(w);
  return Vocabulary(std::move(tokens));
}

enum class Framing { none, cls, bos_eos };

/// Fixed-width id sequence; positions >= length hold PAD.
struct TokenSequence {
  std::vector<int> ids;
  int length = 0;

  std::span<const int> valid() const { return {ids.data(), static_cast<std::size_t>(length)}; }
  int max_len() const { return static_cast<int>(ids.size()); }
  bool mask(int pos) const { return pos < length; }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Truncation keeps the leading words; framing tokens count toward max_len
/// and EOS is always kept for decoder targets.
inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab,
                              int max_len = kDefaultMaxLen, Framing framing = Framing::none) {
  const int reserve = framing == Framing::cls ? 1 : framing == Framing::bos_eos ? 2 : 0;
  require(max_len > reserve, ErrorCode::invalid_argument, "max_len too small for framing");
  TokenSequence seq;
  seq.ids.assign(static_cast<std::size_t>(max_len), token::pad);
  int pos = 0;
  if (framing == Framing::cls) seq.ids[static_cast<std::size_t>(pos++)] = token::cls;
  if (framing == Framing::bos_eos) seq.ids[static_cast<std::size_t>(pos++)] = token::bos;
  const int body_cap = max_len - reserve;
  int body = 0;
  for (const auto& w : split_words(text)) {
    if (body == body_cap) break;
    seq.ids[static_cast<std::size_t>(pos++)] = vocab.id(w);
    ++body;
  }
  if (framing == Framing::bos_eos) seq.ids[static_cast<std::size_t>(pos++)] = token::eos;
  seq.length = pos;
  return seq;
}

/// Joins non-reserved tokens with single spaces; stops at EOS.
inline std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == token::eos) break;
    if (id == token::pad || id == token::bos || id == token::cls) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token_at(id);
  }
  return out;
}

inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  return detokenize(seq.valid(), vocab);
}

// ---------------------------------------------------------------------------
// Splits

struct SplitAssignment {
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

/// test = round(0.2 n); val = floor(0.1 (n - test)); train gets the rest.
/// Validation and test are kept non-empty.
inline SplitSizes split_sizes(std::size_t n) {
  require(n >= 10, ErrorCode::invalid_argument,
          "split needs at least 10 samples, got " + std::to_string(n));
  SplitSizes s;
  s.test = std::max<std::size_t>(1, (n * 2 + 5) / 10);
  const std::size_t rest = n - s.test;
  s.val = std::max<std::size_t>(1, rest / 10);
  s.train = rest - s.val;
  require(s.train >= 1, ErrorCode::invalid_argument, "dataset too small to populate all splits");
  return s;
}

inline SplitAssignment split_ids(std::vector<std::string> ids, std::uint64_t seed) {
  const SplitSizes sizes = split_sizes(ids.size());
  Rng rng(mix_seed(seed, 0x5917));
  rng.shuffle(ids.begin(), ids.end());
  SplitAssignment out;
  out.seed = seed;
  auto it = ids.begin();
  out.test.assign(it, it + static_cast<std::ptrdiff_t>(sizes.test));
  it += static_cast<std::ptrdiff_t>(sizes.test);
  out.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes.val));
  it += static_cast<std::ptrdiff_t>(sizes.val);
  out.train.assign(it, ids.end());
  return out;
}

inline SplitAssignment split_dataset(const DatasetManifest& manifest, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(manifest.records.size());
  for (const auto& r : manifest.records) ids.push_back(r.id);
  return split_ids(std::move(ids), seed);
}

inline nlohmann::json to_json(const SplitAssignment& s) {
  return {{"seed", s.seed}, {"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline SplitAssignment split_from_json(const nlohmann::json& j) {
  SplitAssignment s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

}  // namespace mmx
