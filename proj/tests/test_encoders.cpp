#include <gtest/gtest.h>

#include "mmx/model.hpp"
#include "test_util.hpp"

using namespace mmx;
using mmx::testing::error_code_of;
using mmx::testing::tiny_config;

namespace {

NormalizedClip<double> random_clip(int size, std::uint64_t seed) {
  Rng rng(seed);
  NormalizedClip<double> c{size, std::vector<double>(VideoClip::byte_count(size))};
  for (auto& v : c.values) v = rng.uniform();
  return c;
}

Vocabulary word_vocab() {
  const std::vector<std::string> corpus{"slow down because of pedestrian ahead on the road at night"};
  return build_vocab(corpus);
}

}  // namespace

TEST(InitParams, DeterministicAndRuleBased) {
  const ModelConfig cfg = tiny_config(20);
  const auto a = init_params<double>(cfg, 5);
  const auto b = init_params<double>(cfg, 5);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == init_params<double>(cfg, 6));
  for (const auto& [name, m] : a) {
    ASSERT_TRUE(m.allFinite()) << name;
    if (ends_with(name, ".bias") || ends_with(name, ".beta")) {
      EXPECT_TRUE((m.array() == 0).all()) << name;
    }
    if (ends_with(name, ".gamma")) {
      EXPECT_TRUE((m.array() == 1).all()) << name;
    }
    if (ends_with(name, ".weight")) {
      const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      EXPECT_LE(m.cwiseAbs().maxCoeff(), bound) << name;
      EXPECT_GT(m.cwiseAbs().maxCoeff(), 0.5 * bound) << name;
    }
  }
  EXPECT_NEAR(std::sqrt(a["video.pos_embed"].squaredNorm() / a["video.pos_embed"].size()), 0.02, 0.01);
}

TEST(InitParams, SensorShapesAndSortedNames) {
  const ModelConfig cfg = ModelConfig::toy(30);
  const ParamShapes s = model_shapes(cfg);
  EXPECT_EQ(s.at("sensor.fc1.weight"), (Shape{3, 64}));
  EXPECT_EQ(s.at("sensor.fc2.weight"), (Shape{64, 128}));
  EXPECT_EQ(s.at("fusion.weight"), (Shape{64 + 128 + 64, 64}));
  EXPECT_EQ(s.at("head.weight"), (Shape{64, 5}));
  EXPECT_EQ(s.at("decoder.cond.weight"), (Shape{64, 64}));
  EXPECT_EQ(s.at("decoder.out.weight"), (Shape{64, 30}));
  const auto names = init_params<float>(s, 1).names();
  EXPECT_TRUE(std::is_sorted(names.begin(), names.end()));
}

TEST(InitParams, RejectsIndivisibleHeads) {
  ModelConfig cfg = tiny_config(20);
  cfg.video_heads = 3;
  EXPECT_EQ(error_code_of([&] { init_params<float>(cfg, 1); }), ErrorCode::invalid_config);
  cfg = tiny_config(20);
  cfg.patch = 5;
  EXPECT_EQ(error_code_of([&] { init_params<float>(cfg, 1); }), ErrorCode::invalid_config);
}

TEST(VideoEncoder, TokenCounts) {
  EXPECT_EQ(VideoEncoder(ModelConfig::toy(10)).token_count(), 512);
  EXPECT_EQ(VideoEncoder(ModelConfig::full_scale(10)).token_count(), 1568);
  EXPECT_EQ(ModelConfig::full_scale(10).video_tokens(), 8 * 14 * 14);
}

TEST(VideoEncoder, PatchOrder) {
  ModelConfig cfg = tiny_config(10);
  const VideoEncoder enc(cfg);
  const NormalizedClip<double> clip = random_clip(16, 3);
  const Mat<double> p = enc.patchify(clip);
  ASSERT_EQ(p.rows(), 8);
  ASSERT_EQ(p.cols(), 8 * 8 * 8 * 3);
  // token (t=1, gy=0, gx=1), element (frame 2, y 3, x 4, channel 1) of the tubelet
  const int token = (1 * 2 + 0) * 2 + 1;
  const int elem = ((2 * 8 + 3) * 8 + 4) * 3 + 1;
  EXPECT_EQ(p(token, elem), clip.at(8 + 2, 3, 8 + 4, 1));
}

TEST(VideoEncoder, OutputShapeAndSensitivity) {
  const ModelConfig cfg = tiny_config(10);
  const auto params = init_params<double>(cfg, 2);
  const VideoEncoder enc(cfg);
  NormalizedClip<double> clip = random_clip(16, 4);
  const Row<double> a = enc.forward(params, clip);
  EXPECT_EQ(a.cols(), cfg.video_dim);
  EXPECT_EQ(enc.forward(params, clip), a);
  clip.values[1234] += 0.25;
  EXPECT_NE(enc.forward(params, clip), a);
}

TEST(VideoEncoder, RejectsWrongResolution) {
  const ModelConfig cfg = tiny_config(10);
  const auto params = init_params<double>(cfg, 2);
  EXPECT_EQ(error_code_of([&] { VideoEncoder(cfg).forward(params, random_clip(32, 1)); }), ErrorCode::shape_mismatch);
}

TEST(SensorEncoder, ZeroInputZeroBias) {
  const ModelConfig cfg = tiny_config(10);
  const auto params = init_params<double>(cfg, 3);
  const Row<double> out = SensorEncoder(cfg).forward(params, {0.0, 0.0, 0.0});
  ASSERT_EQ(out.cols(), 128);
  EXPECT_TRUE((out.array() == 0).all());
}

// Straight-line two-layer recompute.
TEST(SensorEncoder, MatchesMatrixOracleAndIsNonNegative) {
  const ModelConfig cfg = tiny_config(10);
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto params = init_params<double>(cfg, static_cast<std::uint64_t>(trial));
    for (const char* b : {"sensor.fc1.bias", "sensor.fc2.bias"})
      for (Eigen::Index i = 0; i < params[b].size(); ++i) params[b].data()[i] = rng.uniform(-0.5, 0.5);
    const std::array<double, 3> x{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const Row<double> out = SensorEncoder(cfg).forward(params, x);
    const auto& w1 = params["sensor.fc1.weight"];
    const auto& b1 = params["sensor.fc1.bias"];
    const auto& w2 = params["sensor.fc2.weight"];
    const auto& b2 = params["sensor.fc2.bias"];
    std::vector<double> h(64);
    for (int j = 0; j < 64; ++j) {
      double s = b1(0, j);
      for (int i = 0; i < 3; ++i) s += x[i] * w1(i, j);
      h[j] = s > 0 ? s : 0;
    }
    for (int k = 0; k < 128; ++k) {
      double s = b2(0, k);
      for (int j = 0; j < 64; ++j) s += h[j] * w2(j, k);
      ASSERT_NEAR(out(k), s > 0 ? s : 0, 1e-6);
      ASSERT_GE(out(k), 0.0);
    }
  }
}

TEST(TextEncoder, PadRegionDoesNotLeak) {
  const Vocabulary v = word_vocab();
  ModelConfig cfg = tiny_config(v.size());
  const auto params = init_params<double>(cfg, 4);
  const TextEncoder enc(cfg);
  TokenSequence seq = tokenize("slow down because of pedestrian", v, cfg.max_len, Framing::cls);
  const Row<double> a = enc.forward(params, seq);
  for (int i = seq.length; i < seq.max_len(); ++i) seq.ids[i] = 5 + (i % 7);
  EXPECT_EQ(enc.forward(params, seq), a);
}

TEST(TextEncoder, OutputLengthIndependentOfSentence) {
  const Vocabulary v = word_vocab();
  const ModelConfig cfg = tiny_config(v.size());
  const auto params = init_params<double>(cfg, 4);
  for (const char* text : {"", "slow", "slow down because of pedestrian ahead on the road at night"})
    EXPECT_EQ(TextEncoder(cfg).forward(params, tokenize(text, v, cfg.max_len, Framing::cls)).cols(), cfg.text_dim);
}

TEST(TextEncoder, RequiresCls) {
  const Vocabulary v = word_vocab();
  const ModelConfig cfg = tiny_config(v.size());
  const auto params = init_params<double>(cfg, 4);
  EXPECT_EQ(error_code_of([&] { TextEncoder(cfg).forward(params, tokenize("slow", v, cfg.max_len)); }),
            ErrorCode::invalid_argument);
}

TEST(TextEncoder, ClsOnlyAttentionIsOne) {
  const Vocabulary v = word_vocab();
  const ModelConfig cfg = tiny_config(v.size());
  const auto params = init_params<double>(cfg, 4);
  AttentionRecord rec;
  const auto seq = tokenize("", v, cfg.max_len, Framing::cls);
  const Row<double> a = TextEncoder(cfg).forward<double>(params, seq, nullptr, &rec);
  EXPECT_EQ(TextEncoder(cfg).forward(params, seq), a);
  for (const auto& grid : export_attention(rec)) {
    ASSERT_EQ(grid.values.size(), 1);
    EXPECT_NEAR(grid.values(0, 0), 1.0, 1e-12);
  }
}

TEST(AttentionExport, RowsSumToOneAndShapes) {
  const Vocabulary v = word_vocab();
  const ModelConfig cfg = tiny_config(v.size());
  const auto params = init_params<double>(cfg, 9);
  AttentionRecord video, text;
  VideoEncoder(cfg).forward<double>(params, random_clip(16, 2), nullptr, &video);
  const auto seq = tokenize("slow down because of pedestrian", v, cfg.max_len, Framing::cls);
  TextEncoder(cfg).forward<double>(params, seq, nullptr, &text);
  for (const auto& layer : video.layers)
    for (Eigen::Index r = 0; r < layer.rows(); ++r) EXPECT_NEAR(layer.row(r).sum(), 1.0, 1e-6);
  const auto vg = export_attention(video);
  ASSERT_EQ(vg.size(), static_cast<std::size_t>(cfg.video_layers));
  EXPECT_EQ(vg[0].values.rows(), cfg.image_size / cfg.patch);
  EXPECT_EQ(vg[0].values.cols(), cfg.image_size / cfg.patch);
  EXPECT_NEAR(vg[0].values.sum(), 1.0, 1e-6);
  const auto tg = export_attention(text);
  EXPECT_EQ(tg[0].values.rows(), 1);
  EXPECT_EQ(tg[0].values.cols(), seq.length);
  EXPECT_NEAR(tg[0].values.sum(), 1.0, 1e-6);
}

TEST(AttentionExport, RejectsEmptyRecord) {
  EXPECT_EQ(error_code_of([] { export_attention(AttentionRecord{}); }), ErrorCode::invalid_argument);
}

TEST(AttentionExport, CsvHeaderAndRows) {
  mmx::testing::TempDir dir("attn");
  AttentionGrid g{"video", 1, Mat<double>::Constant(2, 3, 0.5)};
  write_attention_csv(g, dir.path() / "a.csv");
  const std::string text = detail::read_file(dir.path() / "a.csv");
  EXPECT_EQ(text.rfind("# modality=video layer=1 rows=2 cols=3\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

TEST(ShapeContract, FullScaleWidths) {
  ModelConfig cfg = ModelConfig::full_scale(1000);
  EXPECT_EQ(cfg.concat_dim(), 1664);
  EXPECT_EQ(cfg.head_input_dim(), 768);
  EXPECT_EQ(model_shapes(cfg).at("fusion.weight"), (Shape{1664, 768}));
  cfg.fusion = FusionMode::simple_concat;
  EXPECT_EQ(cfg.head_input_dim(), 1664);
}
