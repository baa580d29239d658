#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "arl/error.hpp"
#include "arl/linalg.hpp"
#include "arl/rng.hpp"

namespace arl {

struct EncoderDims {
  std::size_t text_dim = 0;   // d_t
  std::size_t video_dim = 0;  // d_v
  std::size_t embed_dim = 0;  // d
  std::size_t query_len = 0;  // L_q
  std::size_t video_len = 0;  // L_v

  bool operator==(const EncoderDims&) const = default;
};

// Fully connected input layer, followed by ReLU in the forward pass.
struct Projection {
  Mat weight;  // d_in x d
  Vec bias;    // d
};

// Pre-norm single-head self-attention with a residual connection:
//   y = h + softmax(Q K^T / sqrt(d)) V W_o,  [Q K V] = LN(h) [W_q W_k W_v]
struct AttentionLayer {
  Mat query, key, value, output;  // d x d each
  Vec norm_scale, norm_shift;     // d each
};

struct EncoderParams {
  EncoderDims dims;
  Projection text_proj;
  Projection video_proj;
  Mat pos_text;   // L_q x d
  Mat pos_video;  // L_v x d
  AttentionLayer attn_text;
  AttentionLayer attn_video;
  Vec pool_text;  // d; word score = pool_text . word + pool_bias
  Vec pool_bias;  // size 1

  // Visits every learnable tensor as (name, data, size) in a fixed order.
  // Serialization, the optimizer and gradient checks all rely on this order.
  template <typename F>
  void for_each_tensor(F&& f) {
    f("text_proj.weight", text_proj.weight.data(), text_proj.weight.size());
    f("text_proj.bias", text_proj.bias.data(), text_proj.bias.size());
    f("video_proj.weight", video_proj.weight.data(), video_proj.weight.size());
    f("video_proj.bias", video_proj.bias.data(), video_proj.bias.size());
    f("pos_text", pos_text.data(), pos_text.size());
    f("pos_video", pos_video.data(), pos_video.size());
    visit_attention("attn_text", attn_text, f);
    visit_attention("attn_video", attn_video, f);
    f("pool_text", pool_text.data(), pool_text.size());
    f("pool_bias", pool_bias.data(), pool_bias.size());
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<EncoderParams*>(this)->for_each_tensor(
        [&](const char* name, double* data, Eigen::Index n) {
          f(name, static_cast<const double*>(data), n);
        });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const char*, const double*, Eigen::Index size) { n += static_cast<std::size_t>(size); });
    return n;
  }

  bool operator==(const EncoderParams& o) const {
    // Bitwise, so determinism checks distinguish -0.0 from 0.0.
    if (dims != o.dims) return false;
    const auto a = flatten(), b = o.flatten();
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
             return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
           });
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    for_each_tensor([&](const char*, const double* data, Eigen::Index n) { out.insert(out.end(), data, data + n); });
    return out;
  }

  // Same shapes, all zeros.
  static EncoderParams zeros(const EncoderDims& dims) {
    const auto d = static_cast<Eigen::Index>(dims.embed_dim);
    EncoderParams p;
    p.dims = dims;
    p.text_proj = {Mat::Zero(static_cast<Eigen::Index>(dims.text_dim), d), Vec::Zero(d)};
    p.video_proj = {Mat::Zero(static_cast<Eigen::Index>(dims.video_dim), d), Vec::Zero(d)};
    p.pos_text = Mat::Zero(static_cast<Eigen::Index>(dims.query_len), d);
    p.pos_video = Mat::Zero(static_cast<Eigen::Index>(dims.video_len), d);
    for (auto* a : {&p.attn_text, &p.attn_video}) {
      a->query = a->key = a->value = a->output = Mat::Zero(d, d);
      a->norm_scale = a->norm_shift = Vec::Zero(d);
    }
    p.pool_text = Vec::Zero(d);
    p.pool_bias = Vec::Zero(1);
    return p;
  }

 private:
  template <typename F>
  static void visit_attention(const std::string& prefix, AttentionLayer& a, F& f) {
    f((prefix + ".query").c_str(), a.query.data(), a.query.size());
    f((prefix + ".key").c_str(), a.key.data(), a.key.size());
    f((prefix + ".value").c_str(), a.value.data(), a.value.size());
    f((prefix + ".output").c_str(), a.output.data(), a.output.size());
    f((prefix + ".norm_scale").c_str(), a.norm_scale.data(), a.norm_scale.size());
    f((prefix + ".norm_shift").c_str(), a.norm_shift.data(), a.norm_shift.size());
  }
};

// d(loss)/d(theta), laid out exactly like EncoderParams.
struct GradientTape : EncoderParams {
  static GradientTape zeros_like(const EncoderParams& p) {
    GradientTape t;
    static_cast<EncoderParams&>(t) = EncoderParams::zeros(p.dims);
    return t;
  }

  GradientTape& operator+=(const GradientTape& o) {
    auto src = o.flatten();
    std::size_t at = 0;
    for_each_tensor([&](const char*, double* data, Eigen::Index n) {
      for (Eigen::Index k = 0; k < n; ++k) data[k] += src[at++];
    });
    return *this;
  }

  double max_abs() const {
    double m = 0.0;
    for_each_tensor([&](const char*, const double* data, Eigen::Index n) {
      for (Eigen::Index k = 0; k < n; ++k) m = std::max(m, std::abs(data[k]));
    });
    return m;
  }
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; norm scale 1, shifts and the
// pooling bias 0.
inline EncoderParams init_encoder(const EncoderDims& dims, std::uint64_t seed) {
  if (dims.text_dim == 0 || dims.video_dim == 0 || dims.embed_dim == 0 || dims.query_len == 0 ||
      dims.video_len == 0) {
    throw DimensionError("encoder dimensions must all be positive");
  }
  EncoderParams p = EncoderParams::zeros(dims);
  Rng rng(mix_seed(seed, 0x656e63ULL));
  auto fill = [&](auto& m, std::size_t fan_in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-a, a);
  };
  const std::size_t d = dims.embed_dim;
  fill(p.text_proj.weight, dims.text_dim);
  fill(p.text_proj.bias, dims.text_dim);
  fill(p.video_proj.weight, dims.video_dim);
  fill(p.video_proj.bias, dims.video_dim);
  fill(p.pos_text, d);
  fill(p.pos_video, d);
  for (auto* a : {&p.attn_text, &p.attn_video}) {
    fill(a->query, d);
    fill(a->key, d);
    fill(a->value, d);
    fill(a->output, d);
    a->norm_scale.setOnes();
  }
  fill(p.pool_text, d);
  return p;
}

inline constexpr double kLayerNormEps = 1e-5;

// Intermediates of FC -> ReLU -> +pos -> attention layer, kept for backward.
struct SequenceCache {
  Mat input;     // L x d_in
  Mat pre_act;   // L x d, before ReLU
  Mat hidden;    // L x d, ReLU output + positional rows
  Mat normed;    // L x d, (hidden - mean) * rstd
  Vec rstd;      // L
  Mat ln_out;    // L x d
  Mat q, k, v;   // L x d
  Mat attn;      // L x L, row-stochastic
  Mat context;   // L x d
  Mat out;       // L x d
};

struct TextForward {
  SequenceCache seq;
  Vec pool_weights;  // L_q
  Vec embedding;     // d
};

namespace detail {

template <typename M>
void require_finite(const M& m, const char* name) {
  if (!m.allFinite()) throw NumericalError(std::string("non-finite values in ") + name);
}

inline void softmax_rows(Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
}

inline SequenceCache forward_sequence(const Projection& proj, const Mat& pos,
                                      const AttentionLayer& attn, const Mat& x) {
  SequenceCache c;
  c.input = x;
  c.pre_act = x * proj.weight;
  c.pre_act.rowwise() += proj.bias.transpose();
  c.hidden = c.pre_act.cwiseMax(0.0) + pos;

  const auto L = c.hidden.rows();
  const auto d = c.hidden.cols();
  c.normed.resize(L, d);
  c.rstd.resize(L);
  for (Eigen::Index r = 0; r < L; ++r) {
    const double mean = c.hidden.row(r).mean();
    const RowVec centered = c.hidden.row(r).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    c.rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    c.normed.row(r) = centered * c.rstd[r];
  }
  c.ln_out = (c.normed.array().rowwise() * attn.norm_scale.transpose().array()).matrix();
  c.ln_out.rowwise() += attn.norm_shift.transpose();

  c.q = c.ln_out * attn.query;
  c.k = c.ln_out * attn.key;
  c.v = c.ln_out * attn.value;
  c.attn = (c.q * c.k.transpose()) / std::sqrt(static_cast<double>(d));
  softmax_rows(c.attn);
  c.context = c.attn * c.v;
  c.out = c.hidden + c.context * attn.output;
  require_finite(c.out, "encoder output");
  return c;
}

// Accumulates parameter gradients given d(loss)/d(out).
inline void backward_sequence(const AttentionLayer& attn,
                              const SequenceCache& c, const Mat& d_out, Projection& g_proj,
                              Mat& g_pos, AttentionLayer& g_attn) {
  const auto d = static_cast<double>(c.hidden.cols());
  Mat d_hidden = d_out;  // residual path

  g_attn.output.noalias() += c.context.transpose() * d_out;
  const Mat d_context = d_out * attn.output.transpose();
  const Mat d_att = d_context * c.v.transpose();
  const Mat d_v = c.attn.transpose() * d_context;

  Mat d_scores(c.attn.rows(), c.attn.cols());
  for (Eigen::Index r = 0; r < c.attn.rows(); ++r) {
    const double dot = c.attn.row(r).dot(d_att.row(r));
    d_scores.row(r) = c.attn.row(r).array() * (d_att.row(r).array() - dot);
  }
  d_scores /= std::sqrt(d);
  const Mat d_q = d_scores * c.k;
  const Mat d_k = d_scores.transpose() * c.q;

  g_attn.query.noalias() += c.ln_out.transpose() * d_q;
  g_attn.key.noalias() += c.ln_out.transpose() * d_k;
  g_attn.value.noalias() += c.ln_out.transpose() * d_v;
  const Mat d_ln = d_q * attn.query.transpose() + d_k * attn.key.transpose() +
                   d_v * attn.value.transpose();

  g_attn.norm_scale += (d_ln.array() * c.normed.array()).colwise().sum().transpose().matrix();
  g_attn.norm_shift += d_ln.colwise().sum().transpose();
  const Mat d_normed = (d_ln.array().rowwise() * attn.norm_scale.transpose().array()).matrix();
  for (Eigen::Index r = 0; r < d_normed.rows(); ++r) {
    const double mean_g = d_normed.row(r).mean();
    const double mean_gx = d_normed.row(r).dot(c.normed.row(r)) / d;
    d_hidden.row(r) +=
        (c.rstd[r] * (d_normed.row(r).array() - mean_g - c.normed.row(r).array() * mean_gx))
            .matrix();
  }

  g_pos += d_hidden;
  const Mat d_pre = (c.pre_act.array() > 0.0).select(d_hidden, 0.0);
  g_proj.weight.noalias() += c.input.transpose() * d_pre;
  g_proj.bias += d_pre.colwise().sum().transpose();
  require_finite(d_pre, "projection adjoint");
}

}  // namespace detail

inline void check_text_shape(const EncoderParams& p, const Mat& words) {
  if (static_cast<std::size_t>(words.rows()) != p.dims.query_len ||
      static_cast<std::size_t>(words.cols()) != p.dims.text_dim) {
    throw DimensionError("word features are " + std::to_string(words.rows()) + "x" +
                         std::to_string(words.cols()) + ", encoder expects " +
                         std::to_string(p.dims.query_len) + "x" + std::to_string(p.dims.text_dim));
  }
}

inline void check_video_shape(const EncoderParams& p, const Mat& frames) {
  if (static_cast<std::size_t>(frames.rows()) != p.dims.video_len ||
      static_cast<std::size_t>(frames.cols()) != p.dims.video_dim) {
    throw DimensionError("frame features are " + std::to_string(frames.rows()) + "x" +
                         std::to_string(frames.cols()) + ", encoder expects " +
                         std::to_string(p.dims.video_len) + "x" + std::to_string(p.dims.video_dim));
  }
}

inline TextForward forward_text(const EncoderParams& p, const Mat& words) {
  check_text_shape(p, words);
  TextForward f;
  f.seq = detail::forward_sequence(p.text_proj, p.pos_text, p.attn_text, words);
  Vec logits = f.seq.out * p.pool_text;
  logits.array() += p.pool_bias[0];
  const double mx = logits.maxCoeff();
  f.pool_weights = (logits.array() - mx).exp().matrix();
  f.pool_weights /= f.pool_weights.sum();
  f.embedding = f.seq.out.transpose() * f.pool_weights;
  detail::require_finite(f.embedding, "query embedding");
  return f;
}

inline SequenceCache forward_video(const EncoderParams& p, const Mat& frames) {
  check_video_shape(p, frames);
  return detail::forward_sequence(p.video_proj, p.pos_video, p.attn_video, frames);
}

// q = attention-pool(attention-layer(ReLU(FC(words)) + pos_text))
inline Vec encode_text(const EncoderParams& p, const Mat& words) {
  return forward_text(p, words).embedding;
}

// Per-frame embeddings, L_v x d.
inline Mat encode_video(const EncoderParams& p, const Mat& frames) {
  return forward_video(p, frames).out;
}

inline void backward_text(const EncoderParams& p, const TextForward& f, const Vec& d_embedding,
                          GradientTape& g) {
  detail::require_finite(d_embedding, "query embedding adjoint");
  const Mat& y = f.seq.out;
  const Vec& alpha = f.pool_weights;
  Mat d_out = alpha * d_embedding.transpose();
  const Vec d_alpha = y * d_embedding;
  const Vec d_logits = (alpha.array() * (d_alpha.array() - alpha.dot(d_alpha))).matrix();
  g.pool_text.noalias() += y.transpose() * d_logits;
  g.pool_bias[0] += d_logits.sum();
  d_out.noalias() += d_logits * p.pool_text.transpose();
  detail::backward_sequence(p.attn_text, f.seq, d_out, g.text_proj, g.pos_text,
                            g.attn_text);
}

inline void backward_video(const EncoderParams& p, const SequenceCache& f, const Mat& d_frames,
                           GradientTape& g) {
  detail::require_finite(d_frames, "frame embedding adjoint");
  detail::backward_sequence(p.attn_video, f, d_frames, g.video_proj, g.pos_video,
                            g.attn_video);
}

}  // namespace arl
