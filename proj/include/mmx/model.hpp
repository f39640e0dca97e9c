#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmx/config.hpp"
#include "mmx/encoders.hpp"
#include "mmx/fusion.hpp"
#include "mmx/preprocess.hpp"
#include "mmx/rng.hpp"
#include "mmx/synthdata.hpp"

namespace mmx {

/// One sample after preprocessing. The clip stays raw 8-bit and is
/// normalized on use, which keeps large datasets small in memory.
struct Example {
  std::string id;
  std::shared_ptr<const VideoClip> clip;
  std::array<double, 3> sensor{};  // standardized
  TokenSequence description;       // CLS-framed
  TokenSequence explanation;       // BOS ... EOS
  int action = 0;
};

inline Example prepare_example(const Sample& s, const SensorStats& stats, const Vocabulary& vocab, int max_len) {
  Example e;
  e.id = s.id;
  e.clip = std::make_shared<const VideoClip>(s.clip);
  e.sensor = apply_sensor_norm(s.sensor, stats);
  e.description = tokenize(s.description, vocab, max_len, Framing::cls);
  e.explanation = tokenize(s.explanation, vocab, max_len, Framing::bos_eos);
  e.action = static_cast<int>(s.action);
  return e;
}

inline ParamShapes model_shapes(const ModelConfig& cfg) {
  ParamShapes shapes;
  VideoEncoder(cfg).declare(shapes);
  SensorEncoder(cfg).declare(shapes);
  TextEncoder(cfg).declare(shapes);
  Fusion(cfg).declare(shapes);
  ActionHead(cfg).declare(shapes);
  ExplanationDecoder(cfg).declare(shapes);
  return shapes;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Biases and LayerNorm shifts start at 0, LayerNorm gains at 1, positional
/// tables ~ N(0, 0.02), every other array ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
/// Arrays are drawn in sorted-name order from one stream.
template <class T>
ParamStore<T> init_params(const ParamShapes& shapes, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1417));
  ParamStore<T> p(shapes);
  for (auto& [name, m] : p) {
    if (ends_with(name, ".bias") || ends_with(name, ".beta")) {
      m.setZero();
    } else if (ends_with(name, ".gamma")) {
      m.setOnes();
    } else if (ends_with(name, "pos_embed")) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal(0.0, 0.02));
    } else {
      const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-a, a));
    }
  }
  return p;
}

template <class T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return init_params<T>(model_shapes(cfg), seed);
}

template <class T>
struct Prediction {
  ActionDistribution action;
  FusedFeature<T> fused;
  std::vector<int> explanation_ids;  // BOS ... EOS, empty when not decoded
  double explanation_log_prob = 0.0;
};

struct AttentionRecords {
  AttentionRecord video;
  AttentionRecord text;
};

/// Encoders -> fusion -> {action head, explanation decoder}.
template <class T>
class MultimodalModel {
 public:
  struct Trace {
    VideoTrace<T> video;
    SensorTrace<T> sensor;
    TextTrace<T> text;
    Row<T> video_feat, sensor_feat, text_feat;
    FusionTrace<T> fusion;
    FusedFeature<T> fused;
    ActionDistribution action;
    DecoderTrace<T> decoder;
  };

  MultimodalModel(ModelConfig cfg, ParamStore<T> params)
      : cfg_(std::move(cfg)),
        params_(std::move(params)),
        video_(cfg_),
        sensor_(cfg_),
        text_(cfg_),
        fusion_(cfg_),
        head_(cfg_),
        decoder_(cfg_) {
    cfg_.validate();
    const ParamShapes expected = model_shapes(cfg_);
    const ParamShapes actual = params_.shapes();
    require(expected == actual, ErrorCode::shape_mismatch, "parameter shapes do not match the model config");
  }

  static MultimodalModel initialized(const ModelConfig& cfg, std::uint64_t seed) {
    return MultimodalModel(cfg, init_params<T>(cfg, seed));
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamStore<T>& params() const { return params_; }
  ParamStore<T>& params() { return params_; }

  const VideoEncoder& video_encoder() const { return video_; }
  const SensorEncoder& sensor_encoder() const { return sensor_; }
  const TextEncoder& text_encoder() const { return text_; }
  const Fusion& fusion() const { return fusion_; }
  const ActionHead& action_head() const { return head_; }
  const ExplanationDecoder& decoder() const { return decoder_; }

  /// Runs the enabled encoders and fusion.
  FusedFeature<T> encode(const Example& ex, Trace* tr = nullptr, AttentionRecords* rec = nullptr) const {
    Row<T> v, s, t;
    const ModalityMask& m = cfg_.modalities;
    if (m.video) {
      require(ex.clip != nullptr, ErrorCode::invalid_argument, ex.id + ": missing clip");
      v = video_.forward(params_, normalize_clip<T>(*ex.clip, cfg_.image_size), tr ? &tr->video : nullptr,
                         rec ? &rec->video : nullptr);
    }
    if (m.sensor) s = sensor_.forward(params_, ex.sensor, tr ? &tr->sensor : nullptr);
    if (m.text) t = text_.forward(params_, ex.description, tr ? &tr->text : nullptr, rec ? &rec->text : nullptr);
    FusedFeature<T> f = fusion_.forward(params_, m.video ? &v : nullptr, m.sensor ? &s : nullptr,
                                        m.text ? &t : nullptr, tr ? &tr->fusion : nullptr);
    if (tr) {
      tr->video_feat = std::move(v);
      tr->sensor_feat = std::move(s);
      tr->text_feat = std::move(t);
      tr->fused = f;
    }
    return f;
  }

  /// Forward pass of the joint loss; when `grads` is given the gradient of
  /// `scale * total` is accumulated into it.
  LossParts loss(const Example& ex, bool with_explanation, ParamStore<T>* grads = nullptr, T scale = T(1),
                 ActionDistribution* action_out = nullptr) const {
    Trace tr;
    Trace* trp = grads ? &tr : nullptr;
    const FusedFeature<T> f = encode(ex, trp);
    LossParts out;
    const ActionDistribution dist = head_.forward(params_, f.values);
    if (action_out) *action_out = dist;
    std::array<double, kActionCount> dz{};
    out.action = action_loss(dist, ex.action, grads ? &dz : nullptr);

    Mat<T> dlogits;
    if (with_explanation) {
      const Mat<T> logits = decoder_.teacher_forced(params_, f.values, ex.explanation, trp ? &tr.decoder : nullptr);
      out.explanation = explanation_loss(logits, ex.explanation, grads ? &dlogits : nullptr);
    }
    out.total = total_loss(out.action, out.explanation);
    if (!grads) return out;

    for (auto& v : dz) v *= static_cast<double>(scale);
    Row<T> dfused = head_.backward(params_, *grads, f.values, dz);
    if (with_explanation) {
      dlogits *= scale;
      dfused += decoder_.backward(params_, *grads, tr.decoder, dlogits);
    }
    backward_from_fused(tr, dfused, *grads);
    return out;
  }

  /// Pushes d(fused) through fusion and every enabled encoder.
  void backward_from_fused(const Trace& tr, const Row<T>& dfused, ParamStore<T>& grads) const {
    const FusionGrads<T> fg = fusion_.backward(params_, grads, tr.fusion, dfused);
    const ModalityMask& m = cfg_.modalities;
    if (m.video) video_.backward(params_, grads, tr.video, fg.video);
    if (m.sensor) sensor_.backward(params_, grads, tr.sensor, fg.sensor);
    if (m.text) text_.backward(params_, grads, tr.text, fg.text);
  }

  std::vector<double> next_log_probs(const Row<T>& fused, std::span<const int> prefix) const {
    return decoder_.next_log_probs(params_, decoder_.condition(params_, fused), prefix);
  }

  BeamHypothesis decode(const Row<T>& fused, int beams) const {
    const Row<T> cond = decoder_.condition(params_, fused);
    return beam_search([&](std::span<const int> prefix) { return decoder_.next_log_probs(params_, cond, prefix); },
                       BeamSearchOptions{beams, cfg_.max_len, token::bos, token::eos});
  }

  Prediction<T> predict(const Example& ex, bool decode_explanation, int beams,
                        AttentionRecords* rec = nullptr) const {
    Prediction<T> out;
    out.fused = encode(ex, nullptr, rec);
    out.action = head_.forward(params_, out.fused.values);
    if (decode_explanation) {
      const BeamHypothesis h = decode(out.fused.values, beams);
      out.explanation_ids = h.tokens;
      out.explanation_log_prob = h.log_prob;
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  VideoEncoder video_;
  SensorEncoder sensor_;
  TextEncoder text_;
  Fusion fusion_;
  ActionHead head_;
  ExplanationDecoder decoder_;
};

}  // namespace mmx
