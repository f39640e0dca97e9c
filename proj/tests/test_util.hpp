#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "mmx/pipeline.hpp"

namespace mmx::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "mmx_" + tag;
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// A small but complete model: 16 px clips, 8 video tokens, width 16.
inline ModelConfig tiny_config(int vocab_size) {
  ModelConfig c = ModelConfig::toy(vocab_size);
  c.image_size = 16;
  c.patch = 8;
  c.tubelet_frames = 8;
  c.video_dim = 16;
  c.video_layers = 1;
  c.video_heads = 2;
  c.text_dim = 16;
  c.text_layers = 1;
  c.text_heads = 2;
  c.fused_dim = 16;
  c.decoder_dim = 16;
  c.decoder_layers = 1;
  c.decoder_heads = 2;
  c.mlp_ratio = 2;
  c.max_len = 24;
  return c;
}

struct TinyData {
  std::vector<Sample> samples;
  Vocabulary vocab;
  SensorStats stats;
  std::vector<Example> examples;
};

inline TinyData tiny_data(int n, std::uint64_t seed, int max_len = 24, int render = 16) {
  TinyData d;
  d.samples = generate_samples(n, seed, default_distribution(), RenderConfig{render, {}});
  std::vector<std::string> corpus;
  std::vector<SensorReading> sensors;
  for (const auto& s : d.samples) {
    corpus.push_back(s.description);
    corpus.push_back(s.explanation);
    sensors.push_back(s.sensor);
  }
  d.vocab = build_vocab(corpus);
  d.stats = fit_sensor_stats(sensors);
  for (const auto& s : d.samples) d.examples.push_back(prepare_example(s, d.stats, d.vocab, max_len));
  return d;
}

template <class F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an mmx::Error";
  return ErrorCode::invalid_argument;
}

}  // namespace mmx::testing
