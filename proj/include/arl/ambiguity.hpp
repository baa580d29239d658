#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "arl/corpus.hpp"
#include "arl/error.hpp"
#include "arl/linalg.hpp"
#include "arl/similarity.hpp"

namespace arl {

// Dataset-wise uncertainty: mean similarity of each query to every frame in
// the split, and of each frame to every query.
struct UncertaintyTables {
  Vec query;  // N_q
  Mat video;  // N_v x L_v
  std::int64_t epoch = 0;
};

// Means are taken relative to a reference entry, so a constant map yields
// its constant exactly.
inline UncertaintyTables compute_uncertainty(const CorpusSimilarityMap& m) {
  UncertaintyTables t;
  t.epoch = m.epoch;
  const auto nq = static_cast<Eigen::Index>(m.n_queries);
  const auto nv = static_cast<Eigen::Index>(m.n_videos);
  const auto lv = static_cast<Eigen::Index>(m.video_len);
  t.query = Vec::Zero(nq);
  t.video = Mat::Zero(nv, lv);
  if (m.values.empty()) return t;
  for (std::size_t x = 0; x < m.n_queries; ++x) {
    const double ref = m.at(x, 0, 0);
    double row = 0.0;
    for (std::size_t y = 0; y < m.n_videos; ++y)
      for (std::size_t z = 0; z < m.video_len; ++z) {
        const double s = m.at(x, y, z);
        row += s - ref;
        t.video(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(z)) += s - m.at(0, y, z);
      }
    t.query[static_cast<Eigen::Index>(x)] = ref + row / static_cast<double>(m.n_videos * m.video_len);
  }
  for (std::size_t y = 0; y < m.n_videos; ++y)
    for (std::size_t z = 0; z < m.video_len; ++z) {
      double& v = t.video(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(z));
      v = m.at(0, y, z) + v / static_cast<double>(m.n_queries);
    }
  detail::require_finite(t.query, "query uncertainty");
  detail::require_finite(t.video, "frame uncertainty");
  return t;
}

// u^f(q_i, v_jk) = (U_q[i] + U_v[j][k]) / 2, with corpus indices.
inline double frame_uncertainty(const UncertaintyTables& t, std::size_t i, std::size_t j,
                                std::size_t k) {
  if (i >= static_cast<std::size_t>(t.query.size()) ||
      j >= static_cast<std::size_t>(t.video.rows()) ||
      k >= static_cast<std::size_t>(t.video.cols())) {
    throw IndexError("uncertainty index out of range (" + std::to_string(i) + ", " +
                     std::to_string(j) + ", " + std::to_string(k) + ")");
  }
  return 0.5 * (t.query[static_cast<Eigen::Index>(i)] +
                t.video(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)));
}

// u(q_i, V_j), evaluated at the pair's best frame.
inline double pair_uncertainty(const UncertaintyTables& t, std::size_t i, std::size_t j,
                               std::size_t best_frame) {
  return frame_uncertainty(t, i, j, best_frame);
}

struct Thresholds {
  double tau_s = 0.0;
  double tau_u = 0.0;
  std::int64_t epoch = 0;
};

// tau_s: mean retrieval score of the positive pairs.
// tau_u: mean pair uncertainty of the positive pairs at their best frames.
inline Thresholds compute_thresholds(const CorpusSimilarityMap& m, const FeatureCorpus& corpus,
                                     const UncertaintyTables& t) {
  if (corpus.n_queries == 0) throw ConfigError("thresholds need a non-empty train split");
  std::vector<double> s(corpus.n_queries), u(corpus.n_queries);
  for (std::size_t i = 0; i < corpus.n_queries; ++i) {
    const auto r = m.score(i, corpus.pairing[i]);
    s[i] = r.score;
    u[i] = pair_uncertainty(t, i, corpus.pairing[i], r.best_frame);
  }
  auto mean = [](const std::vector<double>& xs) {
    double acc = 0.0;
    for (double x : xs) acc += x - xs.front();
    return xs.front() + acc / static_cast<double>(xs.size());
  };
  return {mean(s), mean(u), m.epoch};
}

inline Thresholds compute_thresholds(const EncoderParams& params, const FeatureCorpus& corpus,
                                     const UncertaintyTables& t) {
  return compute_thresholds(build_corpus_map(params, corpus, t.epoch), corpus, t);
}

// A mini-batch of positive pairs. Rows are queries; columns are the distinct
// paired videos in first-appearance order, so several rows can share a
// column when a video has more than one caption in the batch.
struct Batch {
  std::vector<std::size_t> queries;          // corpus query index per row
  std::vector<std::size_t> videos;           // corpus video index per column
  std::vector<std::size_t> positive_column;  // per row

  std::size_t rows() const { return queries.size(); }
  std::size_t columns() const { return videos.size(); }
  bool is_positive(std::size_t row, std::size_t column) const {
    return positive_column[row] == column;
  }
};

inline Batch make_batch(const FeatureCorpus& corpus, const std::vector<std::size_t>& query_ids) {
  Batch b;
  std::unordered_map<std::size_t, std::size_t> column_of;
  for (auto q : query_ids) {
    if (q >= corpus.n_queries) throw IndexError("batch query index out of range");
    const std::size_t v = corpus.pairing[q];
    auto [it, inserted] = column_of.try_emplace(v, b.videos.size());
    if (inserted) b.videos.push_back(v);
    b.queries.push_back(q);
    b.positive_column.push_back(it->second);
  }
  return b;
}

// Text-video sets for one batch, as batch row/column indices in ascending
// order.
struct VideoLevelSets {
  std::vector<std::vector<std::size_t>> ambiguous_videos;  // per row: A_i^q
  std::vector<std::vector<std::size_t>> negative_videos;   // per row: N_i^q
  std::vector<std::vector<std::size_t>> ambiguous_queries; // per column: A_j^v
  std::vector<std::vector<std::size_t>> negative_queries;  // per column: N_j^v
};

// Text-frame sets for the positive pair of one row. `selected_frame` is the
// frame-level positive; the query-side sets describe that frame against the
// other batch queries.
struct FramePairSets {
  std::size_t selected_frame = 0;
  std::vector<std::size_t> ambiguous_frames;
  std::vector<std::size_t> negative_frames;
  std::vector<std::size_t> ambiguous_queries;
  std::vector<std::size_t> negative_queries;
};

struct AmbiguitySets {
  VideoLevelSets video;
  std::vector<FramePairSets> frames;  // per row; empty when frame level is off

  // Throws std::logic_error on a violated partition invariant.
  void check(const Batch& batch, std::size_t video_len) const;
};

namespace detail {

inline bool exceeds(double s, double u, const Thresholds& th) { return s > th.tau_s && u > th.tau_u; }

}  // namespace detail

// A_i^q = {unpaired V_a : s(q_i, V_a) > tau_s and u(q_i, V_a) > tau_u}, and
// the symmetric A_j^v; everything else unpaired is negative.
inline VideoLevelSets detect_video_ambiguity(const Batch& batch, const BatchSimilarity& sims,
                                             const UncertaintyTables& tables,
                                             const Thresholds& th) {
  const std::size_t n = batch.rows(), m = batch.columns();
  VideoLevelSets out;
  out.ambiguous_videos.resize(n);
  out.negative_videos.resize(n);
  out.ambiguous_queries.resize(m);
  out.negative_queries.resize(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < m; ++c) {
      if (batch.is_positive(i, c)) continue;
      const double s = sims.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      const double u = pair_uncertainty(tables, batch.queries[i], batch.videos[c], sims.best(i, c));
      if (detail::exceeds(s, u, th)) {
        out.ambiguous_videos[i].push_back(c);
        out.ambiguous_queries[c].push_back(i);
      } else {
        out.negative_videos[i].push_back(c);
        out.negative_queries[c].push_back(i);
      }
    }
  }
  return out;
}

// Frame-level detection for each row's positive pair (q_i, V_j): frames of
// V_j other than the best frame are tested with (s^f, u^f); the best frame
// is then tested against the other batch queries. A single-frame video has
// no frame structure beyond the video itself, so every set stays empty.
inline std::vector<FramePairSets> detect_frame_ambiguity(const Batch& batch,
                                                         const BatchSimilarity& sims,
                                                         const UncertaintyTables& tables,
                                                         const Thresholds& th) {
  std::vector<FramePairSets> out(batch.rows());
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    const std::size_t c = batch.positive_column[i];
    const std::size_t vid = batch.videos[c];
    auto& f = out[i];
    f.selected_frame = sims.best(i, c);
    if (sims.video_len == 1) continue;
    for (std::size_t k = 0; k < sims.video_len; ++k) {
      if (k == f.selected_frame) continue;
      const double u = frame_uncertainty(tables, batch.queries[i], vid, k);
      (detail::exceeds(sims.frame(i, c, k), u, th) ? f.ambiguous_frames : f.negative_frames)
          .push_back(k);
    }
    for (std::size_t a = 0; a < batch.rows(); ++a) {
      if (batch.is_positive(a, c)) continue;
      const double u = frame_uncertainty(tables, batch.queries[a], vid, f.selected_frame);
      (detail::exceeds(sims.frame(a, c, f.selected_frame), u, th) ? f.ambiguous_queries
                                                                  : f.negative_queries)
          .push_back(a);
    }
  }
  return out;
}

// All unpaired members negative: the sets the warmup objective runs on.
inline AmbiguitySets empty_ambiguity(const Batch& batch, const BatchSimilarity& sims,
                                     bool with_frames) {
  AmbiguitySets s;
  const std::size_t n = batch.rows(), m = batch.columns();
  s.video.ambiguous_videos.resize(n);
  s.video.negative_videos.resize(n);
  s.video.ambiguous_queries.resize(m);
  s.video.negative_queries.resize(m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < m; ++c) {
      if (batch.is_positive(i, c)) continue;
      s.video.negative_videos[i].push_back(c);
      s.video.negative_queries[c].push_back(i);
    }
  if (with_frames) {
    s.frames.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = batch.positive_column[i];
      auto& f = s.frames[i];
      f.selected_frame = sims.best(i, c);
      if (sims.video_len == 1) continue;
      for (std::size_t k = 0; k < sims.video_len; ++k)
        if (k != f.selected_frame) f.negative_frames.push_back(k);
      for (std::size_t a = 0; a < n; ++a)
        if (!batch.is_positive(a, c)) f.negative_queries.push_back(a);
    }
  }
  return s;
}

inline AmbiguitySets detect_ambiguity(const Batch& batch, const BatchSimilarity& sims,
                                      const UncertaintyTables& tables, const Thresholds& th,
                                      bool with_frames) {
  AmbiguitySets s;
  s.video = detect_video_ambiguity(batch, sims, tables, th);
  if (with_frames) s.frames = detect_frame_ambiguity(batch, sims, tables, th);
  return s;
}

inline void AmbiguitySets::check(const Batch& batch, std::size_t video_len) const {
  auto fail = [](const std::string& what) { throw std::logic_error("ambiguity sets: " + what); };
  auto partition = [&](const std::vector<std::size_t>& amb, const std::vector<std::size_t>& neg,
                       std::size_t universe, auto&& excluded, const char* what) {
    std::vector<int> seen(universe, 0);
    for (auto x : amb) {
      if (x >= universe || excluded(x)) fail(std::string(what) + ": invalid ambiguous member");
      ++seen[x];
    }
    for (auto x : neg) {
      if (x >= universe || excluded(x)) fail(std::string(what) + ": invalid negative member");
      ++seen[x];
    }
    for (std::size_t x = 0; x < universe; ++x)
      if (seen[x] != (excluded(x) ? 0 : 1)) fail(std::string(what) + ": not a partition");
  };
  const std::size_t n = batch.rows(), m = batch.columns();
  if (video.ambiguous_videos.size() != n || video.negative_videos.size() != n ||
      video.ambiguous_queries.size() != m || video.negative_queries.size() != m)
    fail("shape mismatch");
  for (std::size_t i = 0; i < n; ++i)
    partition(video.ambiguous_videos[i], video.negative_videos[i], m,
              [&](std::size_t c) { return batch.is_positive(i, c); }, "video set");
  for (std::size_t c = 0; c < m; ++c)
    partition(video.ambiguous_queries[c], video.negative_queries[c], n,
              [&](std::size_t a) { return batch.is_positive(a, c); }, "query set");
  if (frames.empty()) return;
  if (frames.size() != n) fail("frame sets shape mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = frames[i];
    const std::size_t c = batch.positive_column[i];
    if (f.selected_frame >= video_len) fail("selected frame out of range");
    if (video_len == 1) {
      if (!f.ambiguous_frames.empty() || !f.negative_frames.empty() ||
          !f.ambiguous_queries.empty() || !f.negative_queries.empty())
        fail("single-frame video with non-empty frame sets");
      continue;
    }
    partition(f.ambiguous_frames, f.negative_frames, video_len,
              [&](std::size_t k) { return k == f.selected_frame; }, "frame set");
    partition(f.ambiguous_queries, f.negative_queries, n,
              [&](std::size_t a) { return batch.is_positive(a, c); }, "frame query set");
  }
}

}  // namespace arl
