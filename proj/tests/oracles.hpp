#pragma once

// Reference implementations written straight from the definitions, used to
// cross-check the library. They favour obviousness over speed.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "arl/arl.hpp"

namespace oracle {

using arl::Batch;
using arl::BatchSimilarity;
using arl::Mat;
using arl::Thresholds;
using arl::UncertaintyTables;
using arl::Vec;

// Builds a batch tensor from explicit frame sims (n x m x L, row-major) with
// max/argmax taken by a plain scan.
inline BatchSimilarity sims_from_frames(std::size_t n, std::size_t m, std::size_t L,
                                        const std::vector<double>& frames) {
  BatchSimilarity b;
  b.n_queries = n;
  b.n_videos = m;
  b.video_len = L;
  b.frame_sims = frames;
  b.scores.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  b.best_frame.resize(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < m; ++c) {
      std::size_t arg = 0;
      for (std::size_t k = 0; k < L; ++k)
        if (frames[(i * m + c) * L + k] > frames[(i * m + c) * L + arg]) arg = k;
      b.best_frame[i * m + c] = arg;
      b.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = frames[(i * m + c) * L + arg];
    }
  return b;
}

struct VideoSets {
  std::vector<std::set<std::size_t>> amb_v, neg_v, amb_q, neg_q;
};

// Literal reading of the detection rule: an unpaired (query, video) pair is
// ambiguous iff s > tau_s and u > tau_u, with u the mean of the two table
// entries at the best frame.
inline VideoSets video_sets(const Batch& b, const BatchSimilarity& s, const UncertaintyTables& t,
                            const Thresholds& th) {
  VideoSets o;
  o.amb_v.resize(b.rows());
  o.neg_v.resize(b.rows());
  o.amb_q.resize(b.columns());
  o.neg_q.resize(b.columns());
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t c = 0; c < b.columns(); ++c) {
      if (b.positive_column[i] == c) continue;
      const double sv = s.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      const double uv = (t.query[static_cast<Eigen::Index>(b.queries[i])] +
                         t.video(static_cast<Eigen::Index>(b.videos[c]),
                                 static_cast<Eigen::Index>(s.best_frame[i * b.columns() + c]))) /
                        2.0;
      const bool a = sv > th.tau_s && uv > th.tau_u;
      (a ? o.amb_v : o.neg_v)[i].insert(c);
      (a ? o.amb_q : o.neg_q)[c].insert(i);
    }
  return o;
}

struct FrameSets {
  std::size_t selected = 0;
  std::set<std::size_t> amb_f, neg_f, amb_q, neg_q;
};

inline std::vector<FrameSets> frame_sets(const Batch& b, const BatchSimilarity& s,
                                         const UncertaintyTables& t, const Thresholds& th) {
  std::vector<FrameSets> out(b.rows());
  const std::size_t L = s.video_len;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    const std::size_t c = b.positive_column[i];
    const auto vid = static_cast<Eigen::Index>(b.videos[c]);
    auto& f = out[i];
    f.selected = s.best_frame[i * b.columns() + c];
    if (L == 1) continue;
    for (std::size_t k = 0; k < L; ++k) {
      if (k == f.selected) continue;
      const double sv = s.frame_sims[(i * b.columns() + c) * L + k];
      const double uv = (t.query[static_cast<Eigen::Index>(b.queries[i])] +
                         t.video(vid, static_cast<Eigen::Index>(k))) / 2.0;
      (sv > th.tau_s && uv > th.tau_u ? f.amb_f : f.neg_f).insert(k);
    }
    for (std::size_t a = 0; a < b.rows(); ++a) {
      if (b.positive_column[a] == c) continue;
      const double sv = s.frame_sims[(a * b.columns() + c) * L + f.selected];
      const double uv = (t.query[static_cast<Eigen::Index>(b.queries[a])] +
                         t.video(vid, static_cast<Eigen::Index>(f.selected))) / 2.0;
      (sv > th.tau_s && uv > th.tau_u ? f.amb_q : f.neg_q).insert(a);
    }
  }
  return out;
}

inline std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

inline bool same_video_sets(const arl::VideoLevelSets& got, const VideoSets& want) {
  for (std::size_t i = 0; i < want.amb_v.size(); ++i)
    if (as_set(got.ambiguous_videos[i]) != want.amb_v[i] || as_set(got.negative_videos[i]) != want.neg_v[i])
      return false;
  for (std::size_t c = 0; c < want.amb_q.size(); ++c)
    if (as_set(got.ambiguous_queries[c]) != want.amb_q[c] || as_set(got.negative_queries[c]) != want.neg_q[c])
      return false;
  return got.ambiguous_videos.size() == want.amb_v.size() && got.ambiguous_queries.size() == want.amb_q.size();
}

inline bool same_frame_sets(const std::vector<arl::FramePairSets>& got, const std::vector<FrameSets>& want) {
  if (got.size() != want.size()) return false;
  for (std::size_t i = 0; i < got.size(); ++i)
    if (got[i].selected_frame != want[i].selected || as_set(got[i].ambiguous_frames) != want[i].amb_f ||
        as_set(got[i].negative_frames) != want[i].neg_f || as_set(got[i].ambiguous_queries) != want[i].amb_q ||
        as_set(got[i].negative_queries) != want[i].neg_q)
      return false;
  return true;
}

// A random detection problem. Similarities and uncertainties are drawn from
// a coarse grid and the thresholds from the same grid, so exact ties with the
// thresholds occur often.
struct DetectionCase {
  arl::FeatureCorpus corpus;  // only n_queries, n_videos, video_len, pairing are meaningful
  Batch batch;
  BatchSimilarity sims;
  UncertaintyTables tables;
  Thresholds th;
};

inline DetectionCase random_detection_case(std::uint64_t seed) {
  arl::Rng rng(arl::mix_seed(seed, 0x6f7261636c65ULL));
  auto grid = [&] { return -1.0 + 0.1 * static_cast<double>(rng.below(21)); };
  DetectionCase d;
  auto& c = d.corpus;
  c.n_videos = 2 + rng.below(8);
  c.n_queries = c.n_videos + rng.below(12);
  c.video_len = 1 + rng.below(6);
  for (std::size_t i = 0; i < c.n_queries; ++i)
    c.pairing.push_back(static_cast<std::uint32_t>(i < c.n_videos ? i : rng.below(c.n_videos)));
  std::vector<std::size_t> ids(c.n_queries);
  std::iota(ids.begin(), ids.end(), 0);
  rng.shuffle(ids);
  ids.resize(2 + rng.below(std::min<std::size_t>(c.n_queries - 1, 10)));
  d.batch = arl::make_batch(c, ids);
  std::vector<double> f(d.batch.rows() * d.batch.columns() * c.video_len);
  for (auto& x : f) x = grid();
  d.sims = sims_from_frames(d.batch.rows(), d.batch.columns(), c.video_len, f);
  d.tables.query = Vec(static_cast<Eigen::Index>(c.n_queries));
  d.tables.video = Mat(static_cast<Eigen::Index>(c.n_videos), static_cast<Eigen::Index>(c.video_len));
  for (Eigen::Index k = 0; k < d.tables.query.size(); ++k) d.tables.query[k] = grid();
  for (Eigen::Index k = 0; k < d.tables.video.size(); ++k) d.tables.video.data()[k] = grid();
  d.th = {grid(), grid() / 2.0, 0};
  return d;
}

// U_q[x] and U_v[y][z] by explicit double loops over the map.
inline UncertaintyTables direct_uncertainty(const arl::CorpusSimilarityMap& m) {
  UncertaintyTables t;
  t.query = Vec::Zero(static_cast<Eigen::Index>(m.n_queries));
  t.video = Mat::Zero(static_cast<Eigen::Index>(m.n_videos), static_cast<Eigen::Index>(m.video_len));
  for (std::size_t x = 0; x < m.n_queries; ++x) {
    double s = 0.0;
    for (std::size_t y = 0; y < m.n_videos; ++y)
      for (std::size_t z = 0; z < m.video_len; ++z) s += m.at(x, y, z);
    t.query[static_cast<Eigen::Index>(x)] = s / static_cast<double>(m.n_videos * m.video_len);
  }
  for (std::size_t y = 0; y < m.n_videos; ++y)
    for (std::size_t z = 0; z < m.video_len; ++z) {
      double s = 0.0;
      for (std::size_t x = 0; x < m.n_queries; ++x) s += m.at(x, y, z);
      t.video(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(z)) = s / static_cast<double>(m.n_queries);
    }
  return t;
}

inline arl::CorpusSimilarityMap random_map(std::size_t nq, std::size_t nv, std::size_t lv, std::uint64_t seed) {
  arl::Rng rng(seed);
  arl::CorpusSimilarityMap m;
  m.n_queries = nq;
  m.n_videos = nv;
  m.video_len = lv;
  m.values.resize(nq * nv * lv);
  for (auto& x : m.values) x = rng.uniform(-1.0, 1.0);
  return m;
}

// -log softmax of the positive among {positive} U negatives.
inline double single_positive_nce(double pos, const std::vector<double>& negs) {
  double den = std::exp(pos);
  for (double x : negs) den += std::exp(x);
  return -std::log(std::exp(pos) / den);
}

// Recall@K by sorting each query's videos (score desc, index asc) and
// locating the paired video.
inline arl::RecallReport exhaustive_recall(const Mat& scores, const std::vector<std::uint32_t>& pairing) {
  arl::RecallReport r;
  const auto nq = static_cast<std::size_t>(scores.rows());
  const auto nv = static_cast<std::size_t>(scores.cols());
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < nq; ++i) {
    std::vector<std::size_t> order(nv);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a));
      const double sb = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
      return sa != sb ? sa > sb : a < b;
    });
    ranks.push_back(static_cast<std::size_t>(std::find(order.begin(), order.end(), pairing[i]) - order.begin()));
  }
  r.sum_r = 0.0;
  for (std::size_t K : arl::kRecallCutoffs) {
    std::size_t hit = 0;
    for (auto rank : ranks) hit += rank < K;
    r.r_at[K] = static_cast<double>(hit) / static_cast<double>(nq);
  }
  for (std::size_t K : arl::kRecallCutoffs) r.sum_r += 100.0 * r.r_at[K];
  return r;
}

}  // namespace oracle
