#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mmx/config.hpp"
#include "mmx/nn.hpp"
#include "mmx/preprocess.hpp"
#include "mmx/tensor.hpp"

namespace mmx {

/// Head-averaged self-attention captured during a forward pass, one matrix per layer.
struct AttentionRecord {
  std::string modality;  // "video" or "text"
  std::vector<Mat<double>> layers;
  int time_steps = 0;  // video only
  int grid = 0;        // video only: patches per side
};

/// Grads of the parameters only (no input gradient is formed).
template <class T>
void linear_param_backward(const Mat<T>& x, const Mat<T>& dy, Mat<T>& gw, Mat<T>& gb) {
  gw.noalias() += x.transpose() * dy;
  gb.row(0) += dy.colwise().sum();
}

// ---------------------------------------------------------------------------
// Video: tubelet patches -> learned positions -> transformer -> token mean.

template <class T>
struct VideoTrace {
  Mat<T> patches;
  nn::StackTrace<T> stack;
  nn::LayerNormTrace<T> norm;
  int tokens = 0;
};

class VideoEncoder {
 public:
  explicit VideoEncoder(const ModelConfig& cfg)
      : frames_(cfg.frames),
        tubelet_(cfg.tubelet_frames),
        patch_(cfg.patch),
        size_(cfg.image_size),
        dim_(cfg.video_dim),
        stack_{"video", cfg.video_layers, cfg.video_heads, cfg.video_dim,
               cfg.video_dim * cfg.mlp_ratio, false} {}

  int grid() const { return size_ / patch_; }
  int time_steps() const { return frames_ / tubelet_; }
  int token_count() const { return time_steps() * grid() * grid(); }
  int patch_dim() const { return tubelet_ * patch_ * patch_ * 3; }

  void declare(ParamShapes& shapes) const {
    shapes["video.patch_embed.weight"] = {patch_dim(), dim_};
    shapes["video.patch_embed.bias"] = {1, dim_};
    shapes["video.pos_embed"] = {token_count(), dim_};
    stack_.declare(shapes);
    shapes["video.final_norm.gamma"] = {1, dim_};
    shapes["video.final_norm.beta"] = {1, dim_};
  }

  /// Row t*G*G + gy*G + gx holds the tubelet at (t, gy, gx), flattened (frame, y, x, channel).
  template <class T>
  Mat<T> patchify(const NormalizedClip<T>& clip) const {
    require(clip.size == size_ && clip.values.size() == static_cast<std::size_t>(frames_) * size_ * size_ * 3,
            ErrorCode::shape_mismatch,
            "video clip must be (16, " + std::to_string(size_) + ", " + std::to_string(size_) + ", 3)");
    const int g = grid();
    Mat<T> out(token_count(), patch_dim());
    for (int t = 0; t < time_steps(); ++t)
      for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
          T* row = out.row((t * g + gy) * g + gx).data();
          int k = 0;
          for (int df = 0; df < tubelet_; ++df)
            for (int y = 0; y < patch_; ++y) {
              const T* src = &clip.values[((static_cast<std::size_t>(t * tubelet_ + df) * size_ +
                                            gy * patch_ + y) * size_ + gx * patch_) * 3];
              for (int i = 0; i < patch_ * 3; ++i) row[k++] = src[i];
            }
        }
    return out;
  }

  template <class T>
  Row<T> forward(const ParamStore<T>& p, const NormalizedClip<T>& clip, VideoTrace<T>* trace = nullptr,
                 AttentionRecord* record = nullptr) const {
    Mat<T> patches = patchify(clip);
    Mat<T> x = nn::linear(patches, p["video.patch_embed.weight"], p["video.patch_embed.bias"]);
    x += p["video.pos_embed"];
    std::vector<Mat<T>> maps;
    x = nn::stack_forward(stack_, p, std::move(x), trace ? &trace->stack : nullptr,
                          record ? &maps : nullptr);
    const Mat<T> pooled = x.colwise().mean();
    Mat<T> out = nn::layer_norm(pooled, p["video.final_norm.gamma"], p["video.final_norm.beta"],
                                trace ? &trace->norm : nullptr);
    if (trace) {
      trace->patches = std::move(patches);
      trace->tokens = token_count();
    }
    if (record) {
      record->modality = "video";
      record->time_steps = time_steps();
      record->grid = grid();
      record->layers.clear();
      for (auto& m : maps) record->layers.push_back(m.template cast<double>());
    }
    return out.row(0);
  }

  template <class T>
  void backward(const ParamStore<T>& p, ParamStore<T>& g, const VideoTrace<T>& trace,
                const Row<T>& dout) const {
    const Mat<T> dpooled = nn::layer_norm_backward(trace.norm, p["video.final_norm.gamma"], Mat<T>(dout),
                                                   g["video.final_norm.gamma"], g["video.final_norm.beta"]);
    Mat<T> dx = dpooled.replicate(trace.tokens, 1) / static_cast<T>(trace.tokens);
    dx = nn::stack_backward(stack_, p, g, trace.stack, std::move(dx));
    g["video.pos_embed"] += dx;
    linear_param_backward(trace.patches, dx, g["video.patch_embed.weight"], g["video.patch_embed.bias"]);
  }

 private:
  int frames_, tubelet_, patch_, size_, dim_;
  nn::StackSpec stack_;
};

// ---------------------------------------------------------------------------
// Sensor MLP: ReLU(W2 ReLU(W1 x + b1) + b2), 3 -> 64 -> 128.

template <class T>
struct SensorTrace {
  Mat<T> input;
  Mat<T> pre1;
  Mat<T> hidden;
  Mat<T> pre2;
};

class SensorEncoder {
 public:
  explicit SensorEncoder(const ModelConfig& cfg) : hidden_(cfg.sensor_hidden), dim_(cfg.sensor_dim) {}

  void declare(ParamShapes& shapes) const {
    shapes["sensor.fc1.weight"] = {3, hidden_};
    shapes["sensor.fc1.bias"] = {1, hidden_};
    shapes["sensor.fc2.weight"] = {hidden_, dim_};
    shapes["sensor.fc2.bias"] = {1, dim_};
  }

  template <class T>
  Row<T> forward(const ParamStore<T>& p, const std::array<double, 3>& x,
                 SensorTrace<T>* trace = nullptr) const {
    Mat<T> in(1, 3);
    for (int c = 0; c < 3; ++c) in(0, c) = static_cast<T>(x[static_cast<std::size_t>(c)]);
    Mat<T> pre1 = nn::linear(in, p["sensor.fc1.weight"], p["sensor.fc1.bias"]);
    Mat<T> hidden = nn::relu(pre1);
    Mat<T> pre2 = nn::linear(hidden, p["sensor.fc2.weight"], p["sensor.fc2.bias"]);
    Row<T> out = nn::relu(pre2).row(0);
    if (trace) *trace = {std::move(in), std::move(pre1), std::move(hidden), std::move(pre2)};
    return out;
  }

  template <class T>
  void backward(const ParamStore<T>& p, ParamStore<T>& g, const SensorTrace<T>& tr,
                const Row<T>& dout) const {
    Mat<T> d2 = (tr.pre2.array() > T(0)).select(Mat<T>(dout), T(0));
    Mat<T> dh = nn::linear_backward(tr.hidden, p["sensor.fc2.weight"], d2, g["sensor.fc2.weight"],
                                    g["sensor.fc2.bias"]);
    Mat<T> d1 = (tr.pre1.array() > T(0)).select(dh, T(0));
    linear_param_backward(tr.input, d1, g["sensor.fc1.weight"], g["sensor.fc1.bias"]);
  }

 private:
  int hidden_, dim_;
};

// ---------------------------------------------------------------------------
// Text: bidirectional transformer over the valid (non-PAD) positions; the
// feature is the final hidden state at the leading CLS token.

template <class T>
struct TextTrace {
  std::vector<int> ids;
  nn::StackTrace<T> stack;
  nn::LayerNormTrace<T> norm;
};

inline void check_cls_sequence(const TokenSequence& seq) {
  require(seq.length >= 1 && !seq.ids.empty() && seq.ids[0] == token::cls, ErrorCode::invalid_argument,
          "text encoder input must start with CLS");
  require(seq.length <= seq.max_len(), ErrorCode::invalid_argument, "token length exceeds max_len");
  for (int i = 0; i < seq.length; ++i)
    require(seq.ids[static_cast<std::size_t>(i)] != token::pad, ErrorCode::invalid_argument,
            "PAD inside the valid region");
}

class TextEncoder {
 public:
  explicit TextEncoder(const ModelConfig& cfg)
      : vocab_(cfg.vocab_size),
        max_len_(cfg.max_len),
        dim_(cfg.text_dim),
        stack_{"text", cfg.text_layers, cfg.text_heads, cfg.text_dim, cfg.text_dim * cfg.mlp_ratio, false} {}

  void declare(ParamShapes& shapes) const {
    shapes["text.tok_embed"] = {vocab_, dim_};
    shapes["text.pos_embed"] = {max_len_, dim_};
    stack_.declare(shapes);
    shapes["text.final_norm.gamma"] = {1, dim_};
    shapes["text.final_norm.beta"] = {1, dim_};
  }

  template <class T>
  Row<T> forward(const ParamStore<T>& p, const TokenSequence& seq, TextTrace<T>* trace = nullptr,
                 AttentionRecord* record = nullptr) const {
    check_cls_sequence(seq);
    require(seq.length <= max_len_, ErrorCode::invalid_argument, "text longer than max_len");
    const auto ids = seq.valid();
    const Mat<T>& tok = p["text.tok_embed"];
    Mat<T> x = p["text.pos_embed"].topRows(seq.length);
    for (int i = 0; i < seq.length; ++i) {
      const int id = ids[static_cast<std::size_t>(i)];
      require(id >= 0 && id < vocab_, ErrorCode::invalid_argument, "token id outside vocabulary");
      x.row(i) += tok.row(id);
    }
    std::vector<Mat<T>> maps;
    x = nn::stack_forward(stack_, p, std::move(x), trace ? &trace->stack : nullptr, record ? &maps : nullptr);
    Mat<T> out = nn::layer_norm(Mat<T>(x.topRows(1)), p["text.final_norm.gamma"], p["text.final_norm.beta"],
                                trace ? &trace->norm : nullptr);
    if (trace) trace->ids.assign(ids.begin(), ids.end());
    if (record) {
      record->modality = "text";
      record->layers.clear();
      for (auto& m : maps) record->layers.push_back(m.template cast<double>());
    }
    return out.row(0);
  }

  template <class T>
  void backward(const ParamStore<T>& p, ParamStore<T>& g, const TextTrace<T>& tr, const Row<T>& dout) const {
    const auto n = static_cast<Eigen::Index>(tr.ids.size());
    Mat<T> dx = Mat<T>::Zero(n, dim_);
    dx.row(0) = nn::layer_norm_backward(tr.norm, p["text.final_norm.gamma"], Mat<T>(dout),
                                        g["text.final_norm.gamma"], g["text.final_norm.beta"]);
    dx = nn::stack_backward(stack_, p, g, tr.stack, std::move(dx));
    g["text.pos_embed"].topRows(n) += dx;
    Mat<T>& gtok = g["text.tok_embed"];
    for (Eigen::Index i = 0; i < n; ++i) gtok.row(tr.ids[static_cast<std::size_t>(i)]) += dx.row(i);
  }

 private:
  int vocab_, max_len_, dim_;
  nn::StackSpec stack_;
};

// ---------------------------------------------------------------------------
// Attention export

struct AttentionGrid {
  std::string modality;
  int layer = 0;
  Mat<double> values;
};

/// Video: mean over all query rows, folded over time onto the patch grid.
/// Text: the CLS query row over the valid positions.
inline std::vector<AttentionGrid> export_attention(const AttentionRecord& record) {
  require(!record.layers.empty(), ErrorCode::invalid_argument,
          "no attention was recorded (run the encoder with recording enabled)");
  std::vector<AttentionGrid> out;
  for (std::size_t l = 0; l < record.layers.size(); ++l) {
    const Mat<double>& a = record.layers[l];
    AttentionGrid grid{record.modality, static_cast<int>(l), {}};
    if (record.modality == "video") {
      const Row<double> pooled = a.colwise().mean();
      const int g = record.grid;
      grid.values = Mat<double>::Zero(g, g);
      for (int t = 0; t < record.time_steps; ++t)
        for (int y = 0; y < g; ++y)
          for (int x = 0; x < g; ++x) grid.values(y, x) += pooled((t * g + y) * g + x);
    } else {
      grid.values = a.topRows(1);
    }
    out.push_back(std::move(grid));
  }
  return out;
}

inline void write_attention_csv(const AttentionGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io_error, "cannot write " + path.string());
  out << "# modality=" << grid.modality << " layer=" << grid.layer << " rows=" << grid.values.rows()
      << " cols=" << grid.values.cols() << "\n";
  char buf[32];
  for (Eigen::Index r = 0; r < grid.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < grid.values.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9f", grid.values(r, c));
      out << (c ? "," : "") << buf;
    }
    out << "\n";
  }
}

}  // namespace mmx
