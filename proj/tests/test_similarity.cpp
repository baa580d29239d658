#include <gtest/gtest.h>

#include <cmath>

#include "arl/corpus.hpp"
#include "arl/similarity.hpp"

using namespace arl;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double x : xs) v[k++] = x;
  return v;
}

// Unit frames whose cosine with (1, 0) is exactly the given values.
Mat frames_with_cosines(std::initializer_list<double> cs) {
  Mat m(static_cast<Eigen::Index>(cs.size()), 2);
  Eigen::Index r = 0;
  for (double c : cs) m.row(r++) << c, std::sqrt(1.0 - c * c);
  return m;
}

FeatureCorpus tiny_corpus(std::size_t nq, std::size_t nv, std::size_t lv, std::uint64_t seed) {
  CorpusSpec s;
  s.n_queries = nq;
  s.n_videos = nv;
  s.query_len = 3;
  s.video_len = lv;
  s.text_dim = 6;
  s.video_dim = 5;
  s.segments_per_video = 1;
  s.latent_dim = 4;
  s.seed = seed;
  return generate_synthetic(s);
}

}  // namespace

TEST(Similarity, CosineExamples) {
  const Vec e = vec({0.6, 0.8});
  EXPECT_DOUBLE_EQ(frame_similarity(e, e), 1.0);
  EXPECT_EQ(frame_similarity(vec({1, 0}), vec({0, 3})), 0.0);
  EXPECT_NEAR(frame_similarity(vec({1, 0}), vec({1, 1}) / std::sqrt(2.0)), 0.70710678, 1e-8);
  const Vec a = vec({0.3, -1.2, 2.0}), b = vec({1.1, 0.4, -0.7});
  EXPECT_EQ(frame_similarity(a, b), frame_similarity(b, a));
  EXPECT_THROW(frame_similarity(vec({0, 0}), vec({1, 0})), DegenerateInputError);
  EXPECT_THROW(frame_similarity(vec({1, 0}), vec({0, 0})), DegenerateInputError);
}

TEST(Similarity, CosineStaysInRange) {
  Rng rng(3);
  for (int t = 0; t < 2000; ++t) {
    Vec a(5), b(5);
    for (int k = 0; k < 5; ++k) a[k] = rng.normal() * 1e3, b[k] = rng.normal() * 1e-3;
    const double s = t % 2 ? frame_similarity(a, a) : frame_similarity(a, b);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Similarity, RetrievalScoreExamples) {
  const auto r = retrieval_score(vec({1, 0}), frames_with_cosines({0.2, 0.9, 0.5}));
  EXPECT_NEAR(r.score, 0.9, 1e-15);
  EXPECT_EQ(r.best_frame, 1u);

  const auto tie = retrieval_score(vec({1, 0}), frames_with_cosines({0.4, 0.4, 0.4}));
  EXPECT_EQ(tie.best_frame, 0u);

  const Mat one = frames_with_cosines({0.3});
  EXPECT_EQ(retrieval_score(vec({1, 0}), one).score, frame_similarity(vec({1, 0}), one.row(0).transpose()));
  EXPECT_THROW(retrieval_score(vec({1, 0}), Mat(0, 2)), DimensionError);
}

TEST(Similarity, RetrievalScoreIsExhaustiveMax) {
  Rng rng(12);
  for (int t = 0; t < 200; ++t) {
    const auto lv = 1 + rng.below(5);
    Vec q(3);
    Mat v(static_cast<Eigen::Index>(lv), 3);
    for (int k = 0; k < 3; ++k) q[k] = rng.normal();
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = rng.normal();
    double best = -2.0;
    std::size_t arg = 0;
    for (Eigen::Index k = 0; k < v.rows(); ++k) {
      const double s = frame_similarity(q, v.row(k).transpose());
      if (s > best) best = s, arg = static_cast<std::size_t>(k);
    }
    const auto r = retrieval_score(q, v);
    EXPECT_EQ(r.score, best);
    EXPECT_EQ(r.best_frame, arg);
  }
}

TEST(Similarity, SingleQueryMapMatchesDirectCalls) {
  const auto c = tiny_corpus(1, 1, 2, 4);
  const auto p = init_encoder({6, 5, 4, 3, 2}, 1);
  const auto m = build_corpus_map(p, c, 7);
  const Vec q = encode_text(p, c.text(0));
  const Mat v = encode_video(p, c.video(0));
  ASSERT_EQ(m.values.size(), 2u);
  EXPECT_EQ(m.at(0, 0, 0), frame_similarity(q, v.row(0).transpose()));
  EXPECT_EQ(m.at(0, 0, 1), frame_similarity(q, v.row(1).transpose()));
  EXPECT_EQ(m.epoch, 7);
}

TEST(Similarity, MapEqualsNestedLoopAndIsDeterministic) {
  const auto c = tiny_corpus(9, 4, 3, 8);
  const auto p = init_encoder({6, 5, 7, 3, 3}, 2);
  const auto m = build_corpus_map(p, c);
  EXPECT_EQ(m.values, build_corpus_map(p, c).values);
  for (std::size_t x = 0; x < c.n_queries; ++x) {
    const Vec q = encode_text(p, c.text(x));
    for (std::size_t y = 0; y < c.n_videos; ++y) {
      const Mat v = encode_video(p, c.video(y));
      for (std::size_t z = 0; z < c.video_len; ++z) {
        const double s = m.at(x, y, z);
        EXPECT_EQ(s, frame_similarity(q, v.row(static_cast<Eigen::Index>(z)).transpose()));
        EXPECT_GE(s, -1.0);
        EXPECT_LE(s, 1.0);
      }
      const auto r = retrieval_score(q, v);
      EXPECT_EQ(m.score(x, y).score, r.score);
      EXPECT_EQ(m.score(x, y).best_frame, r.best_frame);
    }
  }
}

TEST(Similarity, BatchTensorMatchesMap) {
  const auto c = tiny_corpus(6, 3, 4, 9);
  const auto p = init_encoder({6, 5, 5, 3, 4}, 3);
  const auto e = embed_corpus(p, c);
  const auto m = similarity_map(e);
  const auto b = batch_similarity(e.queries, e.videos);
  EXPECT_EQ(b.frame_sims, m.values);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(b.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), m.score(i, j).score);
      EXPECT_EQ(b.best(i, j), m.score(i, j).best_frame);
    }
}

TEST(Similarity, BackwardMatchesFiniteDifferences) {
  Rng rng(21);
  std::vector<Vec> qs(3, Vec(4));
  std::vector<Mat> vs(2, Mat(3, 4));
  for (auto& q : qs)
    for (int k = 0; k < 4; ++k) q[k] = rng.normal();
  for (auto& v : vs)
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = rng.normal();
  const auto b = batch_similarity(qs, vs);
  std::vector<double> w(b.frame_sims.size());
  for (auto& x : w) x = rng.normal();
  const auto g = similarity_backward(qs, vs, b, w);

  auto f = [&](const std::vector<Vec>& q, const std::vector<Mat>& v) {
    const auto t = batch_similarity(q, v);
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * t.frame_sims[k];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < qs.size(); ++i)
    for (int k = 0; k < 4; ++k) {
      auto up = qs, dn = qs;
      up[i][k] += h;
      dn[i][k] -= h;
      EXPECT_NEAR(g.queries[i][k], (f(up, vs) - f(dn, vs)) / (2 * h), 1e-7);
    }
  for (std::size_t c = 0; c < vs.size(); ++c)
    for (Eigen::Index k = 0; k < vs[c].size(); ++k) {
      auto up = vs, dn = vs;
      up[c].data()[k] += h;
      dn[c].data()[k] -= h;
      EXPECT_NEAR(g.videos[c].data()[k], (f(qs, up) - f(qs, dn)) / (2 * h), 1e-7);
    }
}
