#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

#include "mmx/error.hpp"
#include "mmx/preprocess.hpp"
#include "mmx/synthdata.hpp"

namespace mmx {

enum class FusionMode { full, simple_concat };

inline const char* to_string(FusionMode m) { return m == FusionMode::full ? "full" : "simple_concat"; }

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "full") return FusionMode::full;
  if (s == "simple_concat") return FusionMode::simple_concat;
  fail(ErrorCode::invalid_config, "unknown fusion mode '" + s + "'");
}

/// Which modality feature slots are populated; absent slots are zero-filled.
struct ModalityMask {
  bool video = true;
  bool sensor = true;
  bool text = true;
  bool any() const { return video || sensor || text; }
  friend bool operator==(const ModalityMask&, const ModalityMask&) = default;
};

struct ModelConfig {
  // video
  int image_size = 64;
  int frames = VideoClip::kFrames;
  int tubelet_frames = 2;
  int patch = 8;
  int video_dim = 64;
  int video_layers = 2;
  int video_heads = 4;
  // sensor MLP widths are fixed by the architecture
  int sensor_hidden = 64;
  int sensor_dim = 128;
  // text
  int text_dim = 64;
  int text_layers = 2;
  int text_heads = 4;
  // fusion and heads
  int fused_dim = 64;
  int actions = kActionCount;
  // explanation decoder
  int decoder_dim = 64;
  int decoder_layers = 2;
  int decoder_heads = 4;
  int mlp_ratio = 4;
  int vocab_size = 0;
  int max_len = kDefaultMaxLen;
  int beams = 5;

  FusionMode fusion = FusionMode::full;
  ModalityMask modalities;
  std::uint64_t seed = 0;

  static ModelConfig toy(int vocab_size) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    return c;
  }

  /// Full-scale dimensions (768-wide video/text features).
  static ModelConfig full_scale(int vocab_size) {
    ModelConfig c;
    c.image_size = 224;
    c.patch = 16;
    c.video_dim = 768;
    c.video_layers = 12;
    c.video_heads = 12;
    c.text_dim = 768;
    c.text_layers = 12;
    c.text_heads = 12;
    c.fused_dim = 768;
    c.decoder_dim = 768;
    c.decoder_layers = 6;
    c.decoder_heads = 12;
    c.vocab_size = vocab_size;
    return c;
  }

  int concat_dim() const { return video_dim + sensor_dim + text_dim; }

  /// Width seen by both heads.
  int head_input_dim() const { return fusion == FusionMode::full ? fused_dim : concat_dim(); }

  int video_grid() const { return image_size / patch; }
  int video_time_steps() const { return frames / tubelet_frames; }
  int video_tokens() const { return video_time_steps() * video_grid() * video_grid(); }
  int patch_dim() const { return tubelet_frames * patch * patch * 3; }

  void validate() const {
    auto positive = [](int v, const char* what) {
      require(v > 0, ErrorCode::invalid_config, std::string(what) + " must be positive");
    };
    positive(image_size, "image_size");
    positive(frames, "frames");
    positive(tubelet_frames, "tubelet_frames");
    positive(patch, "patch");
    positive(video_dim, "video_dim");
    positive(video_layers, "video_layers");
    positive(video_heads, "video_heads");
    positive(text_dim, "text_dim");
    positive(text_layers, "text_layers");
    positive(text_heads, "text_heads");
    positive(fused_dim, "fused_dim");
    positive(decoder_dim, "decoder_dim");
    positive(decoder_layers, "decoder_layers");
    positive(decoder_heads, "decoder_heads");
    positive(mlp_ratio, "mlp_ratio");
    positive(max_len, "max_len");
    positive(beams, "beams");
    require(frames == VideoClip::kFrames, ErrorCode::invalid_config, "clips have exactly 16 frames");
    require(frames % tubelet_frames == 0, ErrorCode::invalid_config,
            "frames must be divisible by tubelet_frames");
    require(image_size % patch == 0, ErrorCode::invalid_config, "image_size must be divisible by patch");
    require(video_dim % video_heads == 0, ErrorCode::invalid_config,
            "video_dim must be divisible by video_heads");
    require(text_dim % text_heads == 0, ErrorCode::invalid_config,
            "text_dim must be divisible by text_heads");
    require(decoder_dim % decoder_heads == 0, ErrorCode::invalid_config,
            "decoder_dim must be divisible by decoder_heads");
    require(sensor_hidden == 64 && sensor_dim == 128, ErrorCode::invalid_config,
            "sensor MLP is 3 -> 64 -> 128");
    require(actions == kActionCount, ErrorCode::invalid_config, "there are exactly 5 actions");
    require(vocab_size > token::reserved, ErrorCode::invalid_config,
            "vocab_size must exceed the reserved ids");
    require(max_len >= 3, ErrorCode::invalid_config, "max_len must be at least 3");
    require(modalities.any(), ErrorCode::invalid_config, "at least one modality must be enabled");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},
          {"frames", c.frames},
          {"tubelet_frames", c.tubelet_frames},
          {"patch", c.patch},
          {"video_dim", c.video_dim},
          {"video_layers", c.video_layers},
          {"video_heads", c.video_heads},
          {"sensor_hidden", c.sensor_hidden},
          {"sensor_dim", c.sensor_dim},
          {"text_dim", c.text_dim},
          {"text_layers", c.text_layers},
          {"text_heads", c.text_heads},
          {"fused_dim", c.fused_dim},
          {"actions", c.actions},
          {"decoder_dim", c.decoder_dim},
          {"decoder_layers", c.decoder_layers},
          {"decoder_heads", c.decoder_heads},
          {"mlp_ratio", c.mlp_ratio},
          {"vocab_size", c.vocab_size},
          {"max_len", c.max_len},
          {"beams", c.beams},
          {"fusion", to_string(c.fusion)},
          {"modalities", {{"video", c.modalities.video}, {"sensor", c.modalities.sensor}, {"text", c.modalities.text}}},
          {"seed", c.seed}};
}

/// Reads any subset of fields over `base` (so config files may hold overrides only).
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("image_size", c.image_size);
  get("frames", c.frames);
  get("tubelet_frames", c.tubelet_frames);
  get("patch", c.patch);
  get("video_dim", c.video_dim);
  get("video_layers", c.video_layers);
  get("video_heads", c.video_heads);
  get("sensor_hidden", c.sensor_hidden);
  get("sensor_dim", c.sensor_dim);
  get("text_dim", c.text_dim);
  get("text_layers", c.text_layers);
  get("text_heads", c.text_heads);
  get("fused_dim", c.fused_dim);
  get("actions", c.actions);
  get("decoder_dim", c.decoder_dim);
  get("decoder_layers", c.decoder_layers);
  get("decoder_heads", c.decoder_heads);
  get("mlp_ratio", c.mlp_ratio);
  get("vocab_size", c.vocab_size);
  get("max_len", c.max_len);
  get("beams", c.beams);
  get("seed", c.seed);
  if (j.contains("fusion")) c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
  if (j.contains("modalities")) {
    const auto& m = j.at("modalities");
    if (m.contains("video")) c.modalities.video = m.at("video").get<bool>();
    if (m.contains("sensor")) c.modalities.sensor = m.at("sensor").get<bool>();
    if (m.contains("text")) c.modalities.text = m.at("text").get<bool>();
  }
  return c;
}

}  // namespace mmx
