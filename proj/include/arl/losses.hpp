#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "arl/ambiguity.hpp"
#include "arl/error.hpp"
#include "arl/similarity.hpp"

namespace arl {

struct LossConfig {
  double margin = 0.2;             // m, negatives
  double margin_ambiguous = 0.1;   // m_a, ambiguous members
  double lambda_nce = 0.02;
  double temperature = 1.0;        // exponent divisor; 1 means raw e^s

  void validate() const {
    if (!(margin >= 0.0) || !(margin_ambiguous >= 0.0))
      throw ConfigError("loss: margins must be nonnegative");
    if (!(margin_ambiguous < margin))
      throw ConfigError("loss: margin_ambiguous must be smaller than margin");
    if (!(lambda_nce > 0.0)) throw ConfigError("loss: lambda_nce must be positive");
    if (!(temperature > 0.0)) throw ConfigError("loss: temperature must be positive");
  }
};

struct LossBreakdown {
  double nce_t2v = 0.0;  // batch means
  double nce_v2t = 0.0;
  double trip_a = 0.0;
  double trip_n = 0.0;
  double video_total = 0.0;
  double frame_nce_t2f = 0.0;
  double frame_nce_f2t = 0.0;
  double frame_trip_a = 0.0;
  double frame_trip_n = 0.0;
  double frame_total = 0.0;
  double grand_total = 0.0;
};

// Gradient sink over BatchSimilarity::frame_sims. Null means value only.
using FrameAdjoint = std::vector<double>;

// Scores seen by one anchor, each tied to the frame-cosine slot it was read
// from so gradients land in the right place.
struct AnchorScores {
  std::vector<double> values;
  std::vector<std::size_t> slots;
};

inline AnchorScores text_to_video(const BatchSimilarity& s, std::size_t row) {
  AnchorScores a;
  for (std::size_t c = 0; c < s.n_videos; ++c) {
    a.values.push_back(s.scores(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(c)));
    a.slots.push_back(s.index(row, c, s.best(row, c)));
  }
  return a;
}

inline AnchorScores video_to_text(const BatchSimilarity& s, std::size_t column) {
  AnchorScores a;
  for (std::size_t i = 0; i < s.n_queries; ++i) {
    a.values.push_back(s.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(column)));
    a.slots.push_back(s.index(i, column, s.best(i, column)));
  }
  return a;
}

inline AnchorScores text_to_frame(const BatchSimilarity& s, std::size_t row, std::size_t column) {
  AnchorScores a;
  for (std::size_t k = 0; k < s.video_len; ++k) {
    a.values.push_back(s.frame(row, column, k));
    a.slots.push_back(s.index(row, column, k));
  }
  return a;
}

inline AnchorScores frame_to_text(const BatchSimilarity& s, std::size_t column, std::size_t frame) {
  AnchorScores a;
  for (std::size_t i = 0; i < s.n_queries; ++i) {
    a.values.push_back(s.frame(i, column, frame));
    a.slots.push_back(s.index(i, column, frame));
  }
  return a;
}

// -log[(e^{s_p} + sum_A e^{s_a}) / (e^{s_p} + sum_{A u N} e^{s})] for one
// anchor, exponents divided by `temperature`. Zero when N is empty.
inline double multi_positive_nce(const AnchorScores& a, std::size_t positive,
                                 const std::vector<std::size_t>& ambiguous,
                                 const std::vector<std::size_t>& negative, double temperature,
                                 FrameAdjoint* grad = nullptr, double weight = 1.0) {
  if (negative.empty()) return 0.0;
  auto z = [&](std::size_t x) { return a.values[x] / temperature; };
  double mx = z(positive);
  for (auto x : ambiguous) mx = std::max(mx, z(x));
  for (auto x : negative) mx = std::max(mx, z(x));
  double num = std::exp(z(positive) - mx);
  for (auto x : ambiguous) num += std::exp(z(x) - mx);
  double den = num;
  for (auto x : negative) den += std::exp(z(x) - mx);
  const double value = std::log(den) - std::log(num);
  if (grad) {
    // d/ds_x = (p_den(x) - p_num(x)) / temperature
    const double w = weight / temperature;
    auto add = [&](std::size_t x, double g) { (*grad)[a.slots[x]] += w * g; };
    const double e_pos = std::exp(z(positive) - mx);
    add(positive, e_pos / den - e_pos / num);
    for (auto x : ambiguous) {
      const double e = std::exp(z(x) - mx);
      add(x, e / den - e / num);
    }
    for (auto x : negative) add(x, std::exp(z(x) - mx) / den);
  }
  return value;
}

// max(0, margin + s_c - s_p) with c the highest-scoring member of `contrast`
// (lowest index on ties). An empty contrast set contributes exactly 0.
inline double hardest_hinge(const AnchorScores& a, std::size_t positive,
                            const std::vector<std::size_t>& contrast, double margin,
                            FrameAdjoint* grad = nullptr, double weight = 1.0) {
  if (contrast.empty()) return 0.0;
  std::size_t hardest = contrast.front();
  for (auto x : contrast)
    if (a.values[x] > a.values[hardest]) hardest = x;
  const double term = margin + a.values[hardest] - a.values[positive];
  if (term <= 0.0) return 0.0;
  if (grad) {
    (*grad)[a.slots[hardest]] += weight;
    (*grad)[a.slots[positive]] -= weight;
  }
  return term;
}

inline double loss_nce_t2v(const BatchSimilarity& s, const Batch& b, const VideoLevelSets& sets,
                           std::size_t row, const LossConfig& cfg, FrameAdjoint* grad = nullptr,
                           double weight = 1.0) {
  return multi_positive_nce(text_to_video(s, row), b.positive_column[row],
                            sets.ambiguous_videos[row], sets.negative_videos[row], cfg.temperature,
                            grad, weight);
}

inline double loss_nce_v2t(const BatchSimilarity& s, const Batch& b, const VideoLevelSets& sets,
                           std::size_t row, const LossConfig& cfg, FrameAdjoint* grad = nullptr,
                           double weight = 1.0) {
  const std::size_t c = b.positive_column[row];
  return multi_positive_nce(video_to_text(s, c), row, sets.ambiguous_queries[c],
                            sets.negative_queries[c], cfg.temperature, grad, weight);
}

struct NcePair {
  double t2v = 0.0;
  double v2t = 0.0;
  double total() const { return t2v + v2t; }
};

// Batch means of the two directions; their sum is L^nce.
inline NcePair loss_nce(const BatchSimilarity& s, const Batch& b, const VideoLevelSets& sets,
                        const LossConfig& cfg, FrameAdjoint* grad = nullptr, double weight = 1.0) {
  NcePair out;
  const double w = weight / static_cast<double>(b.rows());
  for (std::size_t i = 0; i < b.rows(); ++i) {
    out.t2v += loss_nce_t2v(s, b, sets, i, cfg, grad, w);
    out.v2t += loss_nce_v2t(s, b, sets, i, cfg, grad, w);
  }
  out.t2v /= static_cast<double>(b.rows());
  out.v2t /= static_cast<double>(b.rows());
  return out;
}

enum class TripletMode { ambiguous, negative };

// Batch mean over positive pairs of the two hinge directions: hardest query
// contrast for the video, hardest video contrast for the query.
inline double loss_triplet(const BatchSimilarity& s, const Batch& b, const VideoLevelSets& sets,
                           double margin, TripletMode mode, FrameAdjoint* grad = nullptr,
                           double weight = 1.0) {
  const double w = weight / static_cast<double>(b.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    const std::size_t c = b.positive_column[i];
    const auto& query_contrast =
        mode == TripletMode::ambiguous ? sets.ambiguous_queries[c] : sets.negative_queries[c];
    const auto& video_contrast =
        mode == TripletMode::ambiguous ? sets.ambiguous_videos[i] : sets.negative_videos[i];
    total += hardest_hinge(video_to_text(s, c), i, query_contrast, margin, grad, w);
    total += hardest_hinge(text_to_video(s, i), c, video_contrast, margin, grad, w);
  }
  return total / static_cast<double>(b.rows());
}

// L^video = lambda_nce L^nce + L_a^trip + L_n^trip
inline LossBreakdown loss_video(const BatchSimilarity& s, const Batch& b, const VideoLevelSets& sets,
                                const LossConfig& cfg, FrameAdjoint* grad = nullptr) {
  LossBreakdown out;
  const NcePair nce = loss_nce(s, b, sets, cfg, grad, cfg.lambda_nce);
  out.nce_t2v = nce.t2v;
  out.nce_v2t = nce.v2t;
  out.trip_a = loss_triplet(s, b, sets, cfg.margin_ambiguous, TripletMode::ambiguous, grad);
  out.trip_n = loss_triplet(s, b, sets, cfg.margin, TripletMode::negative, grad);
  out.video_total = cfg.lambda_nce * nce.total() + out.trip_a + out.trip_n;
  out.grand_total = out.video_total;
  return out;
}

// Text-frame objective: the text-video objective applied to frames. Per
// row, the frame-level positive is the selected frame of the paired video;
// the t2f direction ranges over that video's frames and the f2t direction
// over the batch queries at the selected frame. lambda_nce is shared.
inline LossBreakdown loss_frame(const BatchSimilarity& s, const Batch& b,
                                const std::vector<FramePairSets>& sets, const LossConfig& cfg,
                                FrameAdjoint* grad = nullptr) {
  LossBreakdown out;
  const double n = static_cast<double>(b.rows());
  const double w_nce = cfg.lambda_nce / n;
  const double w_trip = 1.0 / n;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    const auto& f = sets[i];
    const std::size_t c = b.positive_column[i];
    const AnchorScores t2f = text_to_frame(s, i, c);
    const AnchorScores f2t = frame_to_text(s, c, f.selected_frame);
    out.frame_nce_t2f += multi_positive_nce(t2f, f.selected_frame, f.ambiguous_frames,
                                            f.negative_frames, cfg.temperature, grad, w_nce);
    out.frame_nce_f2t += multi_positive_nce(f2t, i, f.ambiguous_queries, f.negative_queries,
                                            cfg.temperature, grad, w_nce);
    out.frame_trip_a +=
        hardest_hinge(f2t, i, f.ambiguous_queries, cfg.margin_ambiguous, grad, w_trip) +
        hardest_hinge(t2f, f.selected_frame, f.ambiguous_frames, cfg.margin_ambiguous, grad, w_trip);
    out.frame_trip_n += hardest_hinge(f2t, i, f.negative_queries, cfg.margin, grad, w_trip) +
                        hardest_hinge(t2f, f.selected_frame, f.negative_frames, cfg.margin, grad,
                                      w_trip);
  }
  out.frame_nce_t2f /= n;
  out.frame_nce_f2t /= n;
  out.frame_trip_a /= n;
  out.frame_trip_n /= n;
  out.frame_total = cfg.lambda_nce * (out.frame_nce_t2f + out.frame_nce_f2t) + out.frame_trip_a +
                    out.frame_trip_n;
  out.grand_total = out.frame_total;
  return out;
}

// Warmup objective: single-positive contrastive plus negative-margin
// triplet over every unpaired batch member, i.e. loss_video on sets with
// nothing ambiguous.
inline double loss_warmup(const BatchSimilarity& s, const Batch& b, const LossConfig& cfg,
                          FrameAdjoint* grad = nullptr) {
  return loss_video(s, b, empty_ambiguity(b, s, false).video, cfg, grad).video_total;
}

// grand_total = L^video + L^frame (frame term only when sets carry frames).
inline LossBreakdown loss_total(const BatchSimilarity& s, const Batch& b, const AmbiguitySets& sets,
                                const LossConfig& cfg, FrameAdjoint* grad = nullptr) {
  LossBreakdown out = loss_video(s, b, sets.video, cfg, grad);
  if (!sets.frames.empty()) {
    const LossBreakdown f = loss_frame(s, b, sets.frames, cfg, grad);
    out.frame_nce_t2f = f.frame_nce_t2f;
    out.frame_nce_f2t = f.frame_nce_f2t;
    out.frame_trip_a = f.frame_trip_a;
    out.frame_trip_n = f.frame_trip_n;
    out.frame_total = f.frame_total;
  }
  out.grand_total = out.video_total + out.frame_total;
  return out;
}

}  // namespace arl
