#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mmx/config.hpp"
#include "mmx/nn.hpp"
#include "mmx/preprocess.hpp"
#include "mmx/tensor.hpp"

namespace mmx {

// ---------------------------------------------------------------------------
// Fusion: concat(video | sensor | text) -> ReLU(W_f c + b_f), or the raw
// concatenation in simple_concat mode. Absent modalities are zero-filled so
// the concat width never changes.

template <class T>
struct FusedFeature {
  Row<T> values;
  ModalityMask provenance;
};

template <class T>
struct FusionTrace {
  Mat<T> concat;
  Mat<T> pre;
};

template <class T>
struct FusionGrads {
  Row<T> video, sensor, text;
};

class Fusion {
 public:
  explicit Fusion(const ModelConfig& cfg)
      : mode_(cfg.fusion), video_(cfg.video_dim), sensor_(cfg.sensor_dim), text_(cfg.text_dim), fused_(cfg.fused_dim) {}

  int concat_dim() const { return video_ + sensor_ + text_; }
  int output_dim() const { return mode_ == FusionMode::full ? fused_ : concat_dim(); }
  FusionMode mode() const { return mode_; }

  void declare(ParamShapes& shapes) const {
    if (mode_ == FusionMode::full) {
      shapes["fusion.weight"] = {concat_dim(), fused_};
      shapes["fusion.bias"] = {1, fused_};
    }
  }

  /// nullptr marks an absent modality.
  template <class T>
  FusedFeature<T> forward(const ParamStore<T>& p, const Row<T>* video, const Row<T>* sensor,
                          const Row<T>* text, FusionTrace<T>* trace = nullptr) const {
    require(video || sensor || text, ErrorCode::invalid_argument, "fusion needs at least one modality");
    Mat<T> concat = Mat<T>::Zero(1, concat_dim());
    auto place = [&](const Row<T>* v, int offset, int width, const char* what) {
      if (!v) return;
      require(v->size() == width, ErrorCode::shape_mismatch,
              std::string(what) + " feature has width " + std::to_string(v->size()) + ", expected " +
                  std::to_string(width));
      concat.block(0, offset, 1, width) = *v;
    };
    place(video, 0, video_, "video");
    place(sensor, video_, sensor_, "sensor");
    place(text, video_ + sensor_, text_, "text");

    FusedFeature<T> out;
    out.provenance = {video != nullptr, sensor != nullptr, text != nullptr};
    if (mode_ == FusionMode::full) {
      Mat<T> pre = nn::linear(concat, p["fusion.weight"], p["fusion.bias"]);
      out.values = nn::relu(pre).row(0);
      if (trace) trace->pre = std::move(pre);
    } else {
      out.values = concat.row(0);
    }
    if (trace) trace->concat = std::move(concat);
    return out;
  }

  template <class T>
  FusionGrads<T> backward(const ParamStore<T>& p, ParamStore<T>& g, const FusionTrace<T>& tr,
                          const Row<T>& dfused) const {
    Mat<T> dconcat;
    if (mode_ == FusionMode::full) {
      Mat<T> dpre = (tr.pre.array() > T(0)).select(Mat<T>(dfused), T(0));
      dconcat = nn::linear_backward(tr.concat, p["fusion.weight"], dpre, g["fusion.weight"], g["fusion.bias"]);
    } else {
      dconcat = dfused;
    }
    return {dconcat.block(0, 0, 1, video_), dconcat.block(0, video_, 1, sensor_),
            dconcat.block(0, video_ + sensor_, 1, text_)};
  }

 private:
  FusionMode mode_;
  int video_, sensor_, text_, fused_;
};

// ---------------------------------------------------------------------------
// Action head

struct ActionDistribution {
  std::array<double, kActionCount> logits{};
  std::array<double, kActionCount> probs{};

  /// Ties resolve to the lowest action index.
  int argmax() const {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

inline ActionDistribution softmax_actions(const std::array<double, kActionCount>& logits) {
  ActionDistribution d;
  d.logits = logits;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (int i = 0; i < kActionCount; ++i) sum += d.probs[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(i)] - m);
  for (auto& p : d.probs) p /= sum;
  return d;
}

class ActionHead {
 public:
  explicit ActionHead(const ModelConfig& cfg) : in_(cfg.head_input_dim()) {}

  void declare(ParamShapes& shapes) const {
    shapes["head.weight"] = {in_, kActionCount};
    shapes["head.bias"] = {1, kActionCount};
  }

  template <class T>
  ActionDistribution forward(const ParamStore<T>& p, const Row<T>& fused) const {
    const Row<T> z = fused * p["head.weight"] + p["head.bias"].row(0);
    std::array<double, kActionCount> logits{};
    for (int i = 0; i < kActionCount; ++i) logits[static_cast<std::size_t>(i)] = static_cast<double>(z(i));
    return softmax_actions(logits);
  }

  /// dlogits -> parameter grads, returns d(fused).
  template <class T>
  Row<T> backward(const ParamStore<T>& p, ParamStore<T>& g, const Row<T>& fused,
                  const std::array<double, kActionCount>& dlogits) const {
    Mat<T> dz(1, kActionCount);
    for (int i = 0; i < kActionCount; ++i) dz(0, i) = static_cast<T>(dlogits[static_cast<std::size_t>(i)]);
    return nn::linear_backward(Mat<T>(fused), p["head.weight"], dz, g["head.weight"], g["head.bias"]).row(0);
  }

 private:
  int in_;
};

// ---------------------------------------------------------------------------
// Explanation decoder: causal transformer whose input embedding at every
// position is token + position + proj(fused). No cross-attention.

template <class T>
struct DecoderTrace {
  Row<T> fused;
  std::vector<int> inputs;
  nn::StackTrace<T> stack;
  nn::LayerNormTrace<T> norm;
  Mat<T> hidden;
};

inline void check_decoder_target(const TokenSequence& target, int max_len) {
  require(target.length <= max_len && target.max_len() <= max_len, ErrorCode::invalid_argument,
          "decoder target longer than max_len");
  require(target.length >= 2 && target.ids[0] == token::bos, ErrorCode::invalid_argument,
          "decoder target must be framed BOS ... EOS");
}

class ExplanationDecoder {
 public:
  explicit ExplanationDecoder(const ModelConfig& cfg)
      : vocab_(cfg.vocab_size),
        max_len_(cfg.max_len),
        dim_(cfg.decoder_dim),
        in_(cfg.head_input_dim()),
        stack_{"decoder", cfg.decoder_layers, cfg.decoder_heads, cfg.decoder_dim,
               cfg.decoder_dim * cfg.mlp_ratio, true} {}

  int vocab_size() const { return vocab_; }
  int max_len() const { return max_len_; }

  void declare(ParamShapes& shapes) const {
    shapes["decoder.tok_embed"] = {vocab_, dim_};
    shapes["decoder.pos_embed"] = {max_len_, dim_};
    shapes["decoder.cond.weight"] = {in_, dim_};
    shapes["decoder.cond.bias"] = {1, dim_};
    stack_.declare(shapes);
    shapes["decoder.final_norm.gamma"] = {1, dim_};
    shapes["decoder.final_norm.beta"] = {1, dim_};
    shapes["decoder.out.weight"] = {dim_, vocab_};
    shapes["decoder.out.bias"] = {1, vocab_};
  }

  template <class T>
  Row<T> condition(const ParamStore<T>& p, const Row<T>& fused) const {
    return fused * p["decoder.cond.weight"] + p["decoder.cond.bias"].row(0);
  }

  /// Logits (n x V) for every input position, given the conditioning row.
  template <class T>
  Mat<T> run(const ParamStore<T>& p, const Row<T>& cond, std::span<const int> inputs,
             DecoderTrace<T>* trace = nullptr) const {
    const auto n = static_cast<Eigen::Index>(inputs.size());
    require(n >= 1 && n <= max_len_, ErrorCode::invalid_argument, "decoder input length out of range");
    const Mat<T>& tok = p["decoder.tok_embed"];
    Mat<T> x = p["decoder.pos_embed"].topRows(n);
    x.rowwise() += cond;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int id = inputs[static_cast<std::size_t>(i)];
      require(id >= 0 && id < vocab_, ErrorCode::invalid_argument, "token id outside vocabulary");
      x.row(i) += tok.row(id);
    }
    x = nn::stack_forward(stack_, p, std::move(x), trace ? &trace->stack : nullptr);
    Mat<T> h = nn::layer_norm(x, p["decoder.final_norm.gamma"], p["decoder.final_norm.beta"],
                              trace ? &trace->norm : nullptr);
    Mat<T> logits = nn::linear(h, p["decoder.out.weight"], p["decoder.out.bias"]);
    if (trace) {
      trace->inputs.assign(inputs.begin(), inputs.end());
      trace->hidden = std::move(h);
    }
    return logits;
  }

  /// Row j predicts target token j+1 (teacher forcing).
  template <class T>
  Mat<T> teacher_forced(const ParamStore<T>& p, const Row<T>& fused, const TokenSequence& target,
                        DecoderTrace<T>* trace = nullptr) const {
    check_decoder_target(target, max_len_);
    const auto ids = target.valid();
    Mat<T> logits = run(p, condition(p, fused), ids.first(ids.size() - 1), trace);
    if (trace) trace->fused = fused;
    return logits;
  }

  template <class T>
  Row<T> backward(const ParamStore<T>& p, ParamStore<T>& g, const DecoderTrace<T>& tr,
                  const Mat<T>& dlogits) const {
    const Mat<T> dh = nn::linear_backward(tr.hidden, p["decoder.out.weight"], dlogits,
                                          g["decoder.out.weight"], g["decoder.out.bias"]);
    Mat<T> dx = nn::layer_norm_backward(tr.norm, p["decoder.final_norm.gamma"], dh,
                                        g["decoder.final_norm.gamma"], g["decoder.final_norm.beta"]);
    dx = nn::stack_backward(stack_, p, g, tr.stack, std::move(dx));
    const auto n = dx.rows();
    g["decoder.pos_embed"].topRows(n) += dx;
    Mat<T>& gtok = g["decoder.tok_embed"];
    for (Eigen::Index i = 0; i < n; ++i) gtok.row(tr.inputs[static_cast<std::size_t>(i)]) += dx.row(i);
    const Mat<T> dcond = dx.colwise().sum();
    return nn::linear_backward(Mat<T>(tr.fused), p["decoder.cond.weight"], dcond, g["decoder.cond.weight"],
                               g["decoder.cond.bias"])
        .row(0);
  }

  /// Next-token log-probabilities after `prefix`. PAD, BOS and CLS are never emitted.
  template <class T>
  std::vector<double> next_log_probs(const ParamStore<T>& p, const Row<T>& cond,
                                     std::span<const int> prefix) const {
    const Mat<T> logits = run(p, cond, prefix);
    Row<T> last = logits.row(logits.rows() - 1);
    for (int banned : {token::pad, token::bos, token::cls}) last(banned) = -std::numeric_limits<T>::infinity();
    return nn::log_softmax(last);
  }

 private:
  int vocab_, max_len_, dim_, in_;
  nn::StackSpec stack_;
};

// ---------------------------------------------------------------------------
// Beam search

struct BeamHypothesis {
  std::vector<int> tokens;  // starts with BOS
  double log_prob = 0.0;
  bool finished = false;
};

struct BeamSearchOptions {
  int beams = 5;
  int max_len = kDefaultMaxLen;  // counts BOS and EOS
  int bos = token::bos;
  int eos = token::eos;
};

/// Next-token log-probabilities given a prefix that starts with BOS.
using NextTokenFn = std::function<std::vector<double>(std::span<const int>)>;

/// Higher score first; ties go to the shorter, then lexicographically smaller sequence.
inline bool beam_better(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

/// Every live beam is expanded over the full vocabulary and the best `beams`
/// candidates survive. A candidate finishes on EOS or at max_len. There is
/// no length penalty, so scores only decrease and the search can stop once
/// the best finished hypothesis outscores every live one.
inline BeamHypothesis beam_search(const NextTokenFn& next, const BeamSearchOptions& opt,
                                  std::vector<BeamHypothesis>* finished_out = nullptr) {
  require(opt.beams >= 1, ErrorCode::invalid_argument, "beam width must be at least 1");
  require(opt.max_len >= 2, ErrorCode::invalid_argument, "max_len must leave room for EOS");
  std::vector<BeamHypothesis> live{{{opt.bos}, 0.0, false}};
  std::vector<BeamHypothesis> finished;

  while (!live.empty()) {
    std::vector<BeamHypothesis> candidates;
    for (const auto& h : live) {
      const std::vector<double> lp = next(h.tokens);
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        if (!std::isfinite(lp[tok])) continue;
        BeamHypothesis c{h.tokens, h.log_prob + lp[tok], false};
        c.tokens.push_back(static_cast<int>(tok));
        c.finished = static_cast<int>(tok) == opt.eos || static_cast<int>(c.tokens.size()) >= opt.max_len;
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(opt.beams), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), beam_better);
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      if (candidates[i].finished)
        finished.push_back(std::move(candidates[i]));
      else
        live.push_back(std::move(candidates[i]));
    }
    if (!finished.empty() && !live.empty()) {
      const double best_done =
          std::max_element(finished.begin(), finished.end(), [](const auto& a, const auto& b) {
            return a.log_prob < b.log_prob;
          })->log_prob;
      if (best_done >= live.front().log_prob) break;
    }
  }
  require(!finished.empty(), ErrorCode::invalid_argument, "beam search produced no hypothesis");
  std::sort(finished.begin(), finished.end(), beam_better);
  if (finished_out) *finished_out = finished;
  return finished.front();
}

// ---------------------------------------------------------------------------
// Losses

struct LossParts {
  double action = 0.0;
  double explanation = 0.0;
  double total = 0.0;
};

/// -log p(label); `dlogits` receives p - onehot.
inline double action_loss(const ActionDistribution& dist, int label,
                          std::array<double, kActionCount>* dlogits = nullptr) {
  require(label >= 0 && label < kActionCount, ErrorCode::invalid_argument, "action label out of range");
  const double m = *std::max_element(dist.logits.begin(), dist.logits.end());
  double sum = 0.0;
  for (double z : dist.logits) sum += std::exp(z - m);
  const double loss = -(dist.logits[static_cast<std::size_t>(label)] - m - std::log(sum));
  if (dlogits) {
    *dlogits = dist.probs;
    (*dlogits)[static_cast<std::size_t>(label)] -= 1.0;
  }
  return loss;
}

/// Mean token cross-entropy of logits row j against target token j+1, over
/// the non-PAD target positions.
template <class T>
double explanation_loss(const Mat<T>& logits, const TokenSequence& target, Mat<T>* dlogits = nullptr) {
  const Eigen::Index n = logits.rows();
  require(n == target.length - 1, ErrorCode::shape_mismatch, "logit rows must equal target length - 1");
  if (dlogits) dlogits->resize(n, logits.cols());
  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = target.ids[static_cast<std::size_t>(j + 1)];
    const auto lp = nn::log_softmax(logits.row(j));
    loss -= lp[static_cast<std::size_t>(y)];
    if (dlogits) {
      for (Eigen::Index v = 0; v < logits.cols(); ++v)
        (*dlogits)(j, v) = static_cast<T>(std::exp(lp[static_cast<std::size_t>(v)]) / static_cast<double>(n));
      (*dlogits)(j, y) -= static_cast<T>(1.0 / static_cast<double>(n));
    }
  }
  return loss / static_cast<double>(n);
}

/// Unweighted sum.
inline double total_loss(double action, double explanation) { return action + explanation; }

}  // namespace mmx
