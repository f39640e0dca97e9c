#pragma once

// Dense layers with hand-written backward passes. Every forward takes an
// optional trace; passing nullptr runs inference without retaining state.
// Backward functions accumulate (+=) into the gradient store.

#include <cmath>
#include <string>
#include <vector>

#include "mmx/tensor.hpp"

namespace mmx::nn {

template <class T>
using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kLayerNormEps = 1e-5;

// --- linear -----------------------------------------------------------------

template <class T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  Mat<T> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <class T>
Mat<T> linear_backward(const Mat<T>& x, const Mat<T>& w, const Mat<T>& dy, Mat<T>& gw, Mat<T>& gb) {
  gw.noalias() += x.transpose() * dy;
  gb.row(0) += dy.colwise().sum();
  Mat<T> dx(dy.rows(), w.rows());
  dx.noalias() = dy * w.transpose();
  return dx;
}

// --- layer norm ---------------------------------------------------------------

template <class T>
struct LayerNormTrace {
  Mat<T> xhat;
  Col<T> rstd;
};

template <class T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gamma, const Mat<T>& beta,
                  LayerNormTrace<T>* trace = nullptr) {
  const Eigen::Index n = x.rows();
  Mat<T> xhat(n, x.cols());
  Col<T> rstd(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = x.row(r).mean();
    xhat.row(r) = x.row(r).array() - mean;
    const T var = xhat.row(r).squaredNorm() / static_cast<T>(x.cols());
    rstd(r) = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    xhat.row(r) *= rstd(r);
  }
  Mat<T> y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  if (trace) {
    trace->xhat = std::move(xhat);
    trace->rstd = std::move(rstd);
  }
  return y;
}

template <class T>
Mat<T> layer_norm_backward(const LayerNormTrace<T>& tr, const Mat<T>& gamma, const Mat<T>& dy,
                           Mat<T>& ggamma, Mat<T>& gbeta) {
  ggamma.row(0) += (dy.array() * tr.xhat.array()).colwise().sum().matrix();
  gbeta.row(0) += dy.colwise().sum();
  Mat<T> dxhat = (dy.array().rowwise() * gamma.row(0).array()).matrix();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T mean_d = dxhat.row(r).mean();
    const T mean_dx = dxhat.row(r).dot(tr.xhat.row(r)) / static_cast<T>(dy.cols());
    dx.row(r) = tr.rstd(r) * (dxhat.row(r).array() - mean_d - tr.xhat.row(r).array() * mean_dx);
  }
  return dx;
}

// --- activations ----------------------------------------------------------------

/// Exact (erf) GELU.
template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

template <class T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

/// Row-wise softmax in place; with `causal`, row r only sees columns <= r.
template <class T>
void softmax_rows(Mat<T>& s, bool causal) {
  const Eigen::Index cols = s.cols();
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const Eigen::Index lim = causal ? std::min<Eigen::Index>(r + 1, cols) : cols;
    auto head = s.row(r).head(lim);
    const T m = head.maxCoeff();
    head = (head.array() - m).exp();
    head /= head.sum();
    if (lim < cols) s.row(r).tail(cols - lim).setZero();
  }
}

// --- multi-head self-attention ------------------------------------------------------

template <class T>
struct AttentionTrace {
  Mat<T> input;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;
  Mat<T> context;
};

/// Fused QKV projection (d -> 3d), scaled dot-product attention per head,
/// output projection. `head_mean`, when given, receives head-averaged weights.
template <class T>
Mat<T> attention(const ParamStore<T>& p, const std::string& prefix, int heads, bool causal,
                 const Mat<T>& x, AttentionTrace<T>* trace = nullptr, Mat<T>* head_mean = nullptr) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Mat<T> qkv = linear(x, p[prefix + "qkv.weight"], p[prefix + "qkv.bias"]);
  Mat<T> ctx(n, d);
  std::vector<Mat<T>> probs;
  if (head_mean) *head_mean = Mat<T>::Zero(n, n);
  for (int h = 0; h < heads; ++h) {
    const auto q = qkv.middleCols(h * dh, dh);
    const auto k = qkv.middleCols(d + h * dh, dh);
    const auto v = qkv.middleCols(2 * d + h * dh, dh);
    Mat<T> s(n, n);
    s.noalias() = q * k.transpose();
    s *= scale;
    softmax_rows(s, causal);
    ctx.middleCols(h * dh, dh).noalias() = s * v;
    if (head_mean) *head_mean += s / static_cast<T>(heads);
    if (trace) probs.push_back(std::move(s));
  }
  Mat<T> out = linear(ctx, p[prefix + "out.weight"], p[prefix + "out.bias"]);
  if (trace) {
    trace->input = x;
    trace->qkv = std::move(qkv);
    trace->probs = std::move(probs);
    trace->context = std::move(ctx);
  }
  return out;
}

template <class T>
Mat<T> attention_backward(const ParamStore<T>& p, ParamStore<T>& g, const std::string& prefix,
                          int heads, const AttentionTrace<T>& tr, const Mat<T>& dout) {
  const Eigen::Index n = tr.input.rows();
  const Eigen::Index d = tr.input.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  const Mat<T> dctx = linear_backward(tr.context, p[prefix + "out.weight"], dout,
                                      g[prefix + "out.weight"], g[prefix + "out.bias"]);
  Mat<T> dqkv(n, 3 * d);
  for (int h = 0; h < heads; ++h) {
    const Mat<T>& prob = tr.probs[static_cast<std::size_t>(h)];
    const auto q = tr.qkv.middleCols(h * dh, dh);
    const auto k = tr.qkv.middleCols(d + h * dh, dh);
    const auto v = tr.qkv.middleCols(2 * d + h * dh, dh);
    const auto dc = dctx.middleCols(h * dh, dh);

    Mat<T> dprob(n, n);
    dprob.noalias() = dc * v.transpose();
    dqkv.middleCols(2 * d + h * dh, dh).noalias() = prob.transpose() * dc;
    const Col<T> inner = (dprob.array() * prob.array()).rowwise().sum();
    Mat<T> ds = (prob.array() * (dprob.array().colwise() - inner.array())).matrix();
    ds *= scale;
    dqkv.middleCols(h * dh, dh).noalias() = ds * k;
    dqkv.middleCols(d + h * dh, dh).noalias() = ds.transpose() * q;
  }
  return linear_backward(tr.input, p[prefix + "qkv.weight"], dqkv, g[prefix + "qkv.weight"],
                         g[prefix + "qkv.bias"]);
}

// --- pre-norm transformer stack -------------------------------------------------------

struct StackSpec {
  std::string prefix;
  int layers = 0;
  int heads = 0;
  int dim = 0;
  int hidden = 0;
  bool causal = false;

  std::string block(int i) const { return prefix + ".blocks." + std::to_string(i) + "."; }

  void declare(ParamShapes& shapes) const {
    for (int i = 0; i < layers; ++i) {
      const std::string b = block(i);
      shapes[b + "ln1.gamma"] = {1, dim};
      shapes[b + "ln1.beta"] = {1, dim};
      shapes[b + "attn.qkv.weight"] = {dim, 3 * dim};
      shapes[b + "attn.qkv.bias"] = {1, 3 * dim};
      shapes[b + "attn.out.weight"] = {dim, dim};
      shapes[b + "attn.out.bias"] = {1, dim};
      shapes[b + "ln2.gamma"] = {1, dim};
      shapes[b + "ln2.beta"] = {1, dim};
      shapes[b + "mlp.fc1.weight"] = {dim, hidden};
      shapes[b + "mlp.fc1.bias"] = {1, hidden};
      shapes[b + "mlp.fc2.weight"] = {hidden, dim};
      shapes[b + "mlp.fc2.bias"] = {1, dim};
    }
  }
};

template <class T>
struct BlockTrace {
  LayerNormTrace<T> ln1;
  AttentionTrace<T> attn;
  LayerNormTrace<T> ln2;
  Mat<T> mlp_in;
  Mat<T> pre_act;
  Mat<T> act;
};

template <class T>
using StackTrace = std::vector<BlockTrace<T>>;

/// x + Attn(LN1(x)), then x + MLP(LN2(x)) per block. `attention_maps`, when
/// given, receives one head-averaged matrix per layer.
template <class T>
Mat<T> stack_forward(const StackSpec& spec, const ParamStore<T>& p, Mat<T> x,
                     StackTrace<T>* trace = nullptr, std::vector<Mat<T>>* attention_maps = nullptr) {
  if (trace) trace->assign(static_cast<std::size_t>(spec.layers), {});
  for (int i = 0; i < spec.layers; ++i) {
    const std::string b = spec.block(i);
    BlockTrace<T>* bt = trace ? &(*trace)[static_cast<std::size_t>(i)] : nullptr;
    Mat<T> map;
    const Mat<T> a_in = layer_norm(x, p[b + "ln1.gamma"], p[b + "ln1.beta"], bt ? &bt->ln1 : nullptr);
    x += attention(p, b + "attn.", spec.heads, spec.causal, a_in, bt ? &bt->attn : nullptr,
                   attention_maps ? &map : nullptr);
    if (attention_maps) attention_maps->push_back(std::move(map));

    Mat<T> m_in = layer_norm(x, p[b + "ln2.gamma"], p[b + "ln2.beta"], bt ? &bt->ln2 : nullptr);
    Mat<T> pre = linear(m_in, p[b + "mlp.fc1.weight"], p[b + "mlp.fc1.bias"]);
    Mat<T> act = pre.unaryExpr([](T v) { return gelu(v); });
    x += linear(act, p[b + "mlp.fc2.weight"], p[b + "mlp.fc2.bias"]);
    if (bt) {
      bt->mlp_in = std::move(m_in);
      bt->pre_act = std::move(pre);
      bt->act = std::move(act);
    }
  }
  return x;
}

template <class T>
Mat<T> stack_backward(const StackSpec& spec, const ParamStore<T>& p, ParamStore<T>& g,
                      const StackTrace<T>& trace, Mat<T> dx) {
  for (int i = spec.layers - 1; i >= 0; --i) {
    const std::string b = spec.block(i);
    const BlockTrace<T>& bt = trace[static_cast<std::size_t>(i)];

    Mat<T> dact = linear_backward(bt.act, p[b + "mlp.fc2.weight"], dx, g[b + "mlp.fc2.weight"],
                                  g[b + "mlp.fc2.bias"]);
    dact.array() *= bt.pre_act.unaryExpr([](T v) { return gelu_grad(v); }).array();
    const Mat<T> dm_in = linear_backward(bt.mlp_in, p[b + "mlp.fc1.weight"], dact,
                                         g[b + "mlp.fc1.weight"], g[b + "mlp.fc1.bias"]);
    dx += layer_norm_backward(bt.ln2, p[b + "ln2.gamma"], dm_in, g[b + "ln2.gamma"], g[b + "ln2.beta"]);

    const Mat<T> da = attention_backward(p, g, b + "attn.", spec.heads, bt.attn, dx);
    dx += layer_norm_backward(bt.ln1, p[b + "ln1.gamma"], da, g[b + "ln1.gamma"], g[b + "ln1.beta"]);
  }
  return dx;
}

// --- losses -------------------------------------------------------------------------

/// log-softmax of a row, computed in double.
template <class Derived>
std::vector<double> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  double m = -INFINITY;
  for (Eigen::Index i = 0; i < logits.size(); ++i) m = std::max(m, static_cast<double>(logits(i)));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<double>(logits(i)) - m);
  const double lse = m + std::log(sum);
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<double>(logits(i)) - lse;
  return out;
}

}  // namespace mmx::nn
