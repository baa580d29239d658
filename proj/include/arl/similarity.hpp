#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "arl/corpus.hpp"
#include "arl/encoder.hpp"
#include "arl/error.hpp"
#include "arl/linalg.hpp"

namespace arl {

// cos(q, v). Zero vectors are rejected rather than regularized with an
// epsilon so gradient checks see the exact function. The clamp only absorbs
// rounding past +-1.
template <typename A, typename B>
double frame_similarity(const Eigen::MatrixBase<A>& q, const Eigen::MatrixBase<B>& v) {
  const double nq = q.norm();
  const double nv = v.norm();
  if (nq == 0.0 || nv == 0.0) throw DegenerateInputError("cosine similarity of a zero vector");
  return std::clamp(q.dot(v) / (nq * nv), -1.0, 1.0);
}

struct RetrievalScore {
  double score = 0.0;
  std::size_t best_frame = 0;
};

// max_k cos(q, v_k); ties resolve to the lowest frame index.
inline RetrievalScore retrieval_score(const Vec& q, const Mat& frames) {
  if (frames.rows() == 0) throw DimensionError("retrieval_score needs at least one frame");
  RetrievalScore best{frame_similarity(q, frames.row(0).transpose()), 0};
  for (Eigen::Index k = 1; k < frames.rows(); ++k) {
    const double s = frame_similarity(q, frames.row(k).transpose());
    if (s > best.score) best = {s, static_cast<std::size_t>(k)};
  }
  return best;
}

// Encoded train (or test) split under one parameter state.
struct CorpusEmbeddings {
  std::vector<Vec> queries;  // N_q vectors of size d
  std::vector<Mat> videos;   // N_v matrices L_v x d
};

inline CorpusEmbeddings embed_corpus(const EncoderParams& params, const FeatureCorpus& corpus) {
  CorpusEmbeddings e;
  e.queries.reserve(corpus.n_queries);
  e.videos.reserve(corpus.n_videos);
  for (std::size_t i = 0; i < corpus.n_queries; ++i)
    e.queries.push_back(encode_text(params, corpus.text(i)));
  for (std::size_t j = 0; j < corpus.n_videos; ++j)
    e.videos.push_back(encode_video(params, corpus.video(j)));
  return e;
}

// M[x][y][z] = cos(q_x, v_yz) over the whole split.
struct CorpusSimilarityMap {
  std::size_t n_queries = 0;
  std::size_t n_videos = 0;
  std::size_t video_len = 0;
  std::vector<double> values;
  std::int64_t epoch = 0;

  double at(std::size_t x, std::size_t y, std::size_t z) const {
    return values[(x * n_videos + y) * video_len + z];
  }

  // max over frames with lowest-index ties, i.e. retrieval_score from the map
  RetrievalScore score(std::size_t x, std::size_t y) const {
    const double* row = values.data() + (x * n_videos + y) * video_len;
    RetrievalScore best{row[0], 0};
    for (std::size_t z = 1; z < video_len; ++z)
      if (row[z] > best.score) best = {row[z], z};
    return best;
  }
};

inline CorpusSimilarityMap similarity_map(const CorpusEmbeddings& e, std::int64_t epoch = 0) {
  CorpusSimilarityMap m;
  m.n_queries = e.queries.size();
  m.n_videos = e.videos.size();
  m.video_len = m.n_videos ? static_cast<std::size_t>(e.videos.front().rows()) : 0;
  m.epoch = epoch;
  m.values.resize(m.n_queries * m.n_videos * m.video_len);
  std::size_t at = 0;
  for (std::size_t x = 0; x < m.n_queries; ++x)
    for (std::size_t y = 0; y < m.n_videos; ++y)
      for (std::size_t z = 0; z < m.video_len; ++z)
        m.values[at++] =
            frame_similarity(e.queries[x], e.videos[y].row(static_cast<Eigen::Index>(z)).transpose());
  return m;
}

inline CorpusSimilarityMap build_corpus_map(const EncoderParams& params, const FeatureCorpus& corpus,
                                            std::int64_t epoch = 0) {
  return similarity_map(embed_corpus(params, corpus), epoch);
}

// Frame-level cosine tensor for a mini-batch: n queries against m videos.
struct BatchSimilarity {
  std::size_t n_queries = 0;
  std::size_t n_videos = 0;
  std::size_t video_len = 0;
  std::vector<double> frame_sims;       // n x m x L_v
  Mat scores;                           // n x m, max over frames
  std::vector<std::size_t> best_frame;  // n x m

  double frame(std::size_t i, std::size_t c, std::size_t k) const {
    return frame_sims[(i * n_videos + c) * video_len + k];
  }
  std::size_t best(std::size_t i, std::size_t c) const { return best_frame[i * n_videos + c]; }
  std::size_t index(std::size_t i, std::size_t c, std::size_t k) const {
    return (i * n_videos + c) * video_len + k;
  }
};

inline BatchSimilarity batch_similarity(const std::vector<Vec>& queries,
                                        const std::vector<Mat>& videos) {
  BatchSimilarity b;
  b.n_queries = queries.size();
  b.n_videos = videos.size();
  b.video_len = b.n_videos ? static_cast<std::size_t>(videos.front().rows()) : 0;
  b.frame_sims.resize(b.n_queries * b.n_videos * b.video_len);
  b.scores.resize(static_cast<Eigen::Index>(b.n_queries), static_cast<Eigen::Index>(b.n_videos));
  b.best_frame.resize(b.n_queries * b.n_videos);
  for (std::size_t i = 0; i < b.n_queries; ++i) {
    for (std::size_t c = 0; c < b.n_videos; ++c) {
      for (std::size_t k = 0; k < b.video_len; ++k)
        b.frame_sims[b.index(i, c, k)] =
            frame_similarity(queries[i], videos[c].row(static_cast<Eigen::Index>(k)).transpose());
      std::size_t best = 0;
      for (std::size_t k = 1; k < b.video_len; ++k)
        if (b.frame(i, c, k) > b.frame(i, c, best)) best = k;
      b.best_frame[i * b.n_videos + c] = best;
      b.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = b.frame(i, c, best);
    }
  }
  return b;
}

struct EmbeddingAdjoints {
  std::vector<Vec> queries;
  std::vector<Mat> videos;
};

// Chain rule through every cosine in the batch tensor:
//   dcos/dq = v/(|q||v|) - cos q/|q|^2,  dcos/dv = q/(|q||v|) - cos v/|v|^2
inline EmbeddingAdjoints similarity_backward(const std::vector<Vec>& queries,
                                             const std::vector<Mat>& videos,
                                             const BatchSimilarity& b,
                                             const std::vector<double>& d_frame_sims) {
  EmbeddingAdjoints g;
  for (const auto& q : queries) g.queries.push_back(Vec::Zero(q.size()));
  for (const auto& v : videos) g.videos.push_back(Mat::Zero(v.rows(), v.cols()));
  for (std::size_t i = 0; i < b.n_queries; ++i) {
    const double nq = queries[i].norm();
    for (std::size_t c = 0; c < b.n_videos; ++c) {
      for (std::size_t k = 0; k < b.video_len; ++k) {
        const double adj = d_frame_sims[b.index(i, c, k)];
        if (adj == 0.0) continue;
        const auto row = static_cast<Eigen::Index>(k);
        const auto v = videos[c].row(row).transpose();
        const double nv = v.norm();
        const double cosv = b.frame(i, c, k);
        g.queries[i] += adj * (v / (nq * nv) - cosv * queries[i] / (nq * nq));
        g.videos[c].row(row) += adj * (queries[i] / (nq * nv) - cosv * v / (nv * nv)).transpose();
      }
    }
  }
  return g;
}

}  // namespace arl
