#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "arl/encoder.hpp"
#include "arl/gradcheck.hpp"

using namespace arl;

namespace {

EncoderDims small_dims(std::size_t lq = 3, std::size_t lv = 4) { return {5, 6, 8, lq, lv}; }

Mat random_mat(Rng& rng, std::size_t r, std::size_t c) {
  Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

bool bit_equal(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index k = 0; k < a.size(); ++k)
    if (std::bit_cast<std::uint64_t>(a.data()[k]) != std::bit_cast<std::uint64_t>(b.data()[k]))
      return false;
  return true;
}

}  // namespace

TEST(Encoder, InitializationBoundsAndConstants) {
  const auto dims = small_dims();
  const auto p = init_encoder(dims, 11);
  EXPECT_LE(p.text_proj.weight.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(5.0));
  EXPECT_LE(p.video_proj.weight.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(6.0));
  EXPECT_LE(p.attn_video.query.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(8.0));
  EXPECT_TRUE((p.attn_text.norm_scale.array() == 1.0).all());
  EXPECT_TRUE((p.attn_text.norm_shift.array() == 0.0).all());
  EXPECT_EQ(p.pool_bias[0], 0.0);
  EXPECT_EQ(p, init_encoder(dims, 11));
  EXPECT_FALSE(p == init_encoder(dims, 12));
  EXPECT_THROW(init_encoder({5, 6, 0, 3, 4}, 1), DimensionError);
}

TEST(Encoder, ZeroInputIsDeterministic) {
  auto p = init_encoder(small_dims(), 3);
  p.text_proj.bias.setZero();
  const Mat words = Mat::Zero(3, 5);
  const Vec a = encode_text(p, words);
  const Vec b = encode_text(p, words);
  EXPECT_TRUE(bit_equal(a, b));
  EXPECT_TRUE(a.allFinite());
}

TEST(Encoder, WordOrderMattersOnlyThroughPositions) {
  Rng rng(5);
  auto p = init_encoder(small_dims(), 4);
  const Mat words = random_mat(rng, 3, 5);
  Mat swapped = words;
  swapped.row(0).swap(swapped.row(2));

  const Vec q1 = encode_text(p, words), q2 = encode_text(p, swapped);
  EXPECT_GT((q1 - q2).cwiseAbs().maxCoeff(), 1e-6);

  for (Eigen::Index r = 1; r < p.pos_text.rows(); ++r) p.pos_text.row(r) = p.pos_text.row(0);
  const Vec e1 = encode_text(p, words), e2 = encode_text(p, swapped);
  EXPECT_LT((e1 - e2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, SingleWordPoolsWithWeightOne) {
  Rng rng(2);
  const auto p = init_encoder(small_dims(1, 2), 9);
  const auto f = forward_text(p, random_mat(rng, 1, 5));
  ASSERT_EQ(f.pool_weights.size(), 1);
  EXPECT_EQ(f.pool_weights[0], 1.0);
  EXPECT_TRUE(bit_equal(f.embedding, f.seq.out.row(0).transpose()));
}

TEST(Encoder, VideoShapeSymmetryDeterminism) {
  Rng rng(8);
  auto p = init_encoder(small_dims(), 6);
  Mat frames = random_mat(rng, 4, 6);
  const Mat out = encode_video(p, frames);
  EXPECT_EQ(out.rows(), 4);
  EXPECT_EQ(out.cols(), 8);
  EXPECT_TRUE(bit_equal(out, encode_video(p, frames)));

  frames.row(3) = frames.row(1);
  p.pos_video.row(3) = p.pos_video.row(1);
  const Mat sym = encode_video(p, frames);
  EXPECT_LT((sym.row(1) - sym.row(3)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Encoder, ShapeAndFiniteErrors) {
  const auto p = init_encoder(small_dims(), 1);
  EXPECT_THROW(encode_text(p, Mat::Zero(2, 5)), DimensionError);
  EXPECT_THROW(encode_text(p, Mat::Zero(3, 4)), DimensionError);
  EXPECT_THROW(encode_video(p, Mat::Zero(4, 5)), DimensionError);
  Mat bad = Mat::Zero(4, 6);
  bad(2, 2) = NAN;
  try {
    encode_video(p, bad);
    FAIL() << "expected a numerical error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder output"), std::string::npos);
    EXPECT_STREQ(e.kind(), "numerical");
  }
}

TEST(Encoder, ZeroAdjointGivesZeroGradient) {
  Rng rng(3);
  const auto p = init_encoder(small_dims(), 2);
  auto tape = GradientTape::zeros_like(p);
  const auto ft = forward_text(p, random_mat(rng, 3, 5));
  const auto fv = forward_video(p, random_mat(rng, 4, 6));
  backward_text(p, ft, Vec::Zero(8), tape);
  backward_video(p, fv, Mat::Zero(4, 8), tape);
  EXPECT_EQ(tape.max_abs(), 0.0);
}

// One word, attention output zeroed, all pre-activations positive: the query
// is x W + b, so d(sum q)/dW = x^T 1 and d(sum q)/db = 1.
TEST(Encoder, LinearPathMatchesOuterProduct) {
  Rng rng(4);
  auto p = init_encoder(small_dims(1, 1), 5);
  p.text_proj.weight = p.text_proj.weight.cwiseAbs();
  p.text_proj.bias.setConstant(0.1);
  p.pos_text.setZero();
  p.attn_text.output.setZero();
  Mat x = random_mat(rng, 1, 5).cwiseAbs();

  const auto f = forward_text(p, x);
  ASSERT_TRUE((f.seq.pre_act.array() > 0.0).all());
  EXPECT_LT((f.embedding - (x * p.text_proj.weight + p.text_proj.bias.transpose()).transpose())
                .cwiseAbs()
                .maxCoeff(),
            1e-15);

  auto tape = GradientTape::zeros_like(p);
  backward_text(p, f, Vec::Ones(8), tape);
  const Mat expected = x.transpose() * RowVec::Ones(8);
  EXPECT_LT((tape.text_proj.weight - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((tape.text_proj.bias - Vec::Ones(8)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(tape.video_proj.weight.cwiseAbs().maxCoeff(), 0.0);
}

// Encoder-only check: a fixed random linear functional of the outputs.
// Draws with a ReLU input within 1e-3 of zero are skipped.
TEST(Encoder, BackwardMatchesFiniteDifferences) {
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 5; ++seed) {
    Rng rng(mix_seed(77, seed));
    auto p = init_encoder(small_dims(), seed);
    for (Eigen::Index k = 0; k < 8; ++k) {
      p.attn_text.norm_scale[k] += 0.3 * rng.normal();
      p.attn_video.norm_shift[k] += 0.3 * rng.normal();
    }
    p.pool_bias[0] = rng.normal();
    const Mat words = random_mat(rng, 3, 5), frames = random_mat(rng, 4, 6);
    const Vec wq = random_mat(rng, 8, 1);
    const Mat wv = random_mat(rng, 4, 8);
    auto objective = [&](const EncoderParams& x) {
      return wq.dot(encode_text(x, words)) + (wv.array() * encode_video(x, frames).array()).sum();
    };
    const auto ft = forward_text(p, words);
    const auto fv = forward_video(p, frames);
    if (std::min(ft.seq.pre_act.cwiseAbs().minCoeff(), fv.pre_act.cwiseAbs().minCoeff()) < 1e-3)
      continue;
    ++checked;
    auto tape = GradientTape::zeros_like(p);
    backward_text(p, ft, wq, tape);
    backward_video(p, fv, wv, tape);
    const auto r = finite_difference_check(p, objective, tape);
    EXPECT_LT(r.max_rel_error, 1e-6) << "seed " << seed << " worst " << r.worst_tensor;
  }
}

TEST(Encoder, TapeAccumulatesAndFlattensInOrder) {
  const auto p = init_encoder(small_dims(), 1);
  auto a = GradientTape::zeros_like(p);
  a.pool_bias[0] = 2.0;
  auto b = a;
  b += a;
  EXPECT_EQ(b.pool_bias[0], 4.0);
  EXPECT_EQ(b.flatten().back(), 4.0);
  EXPECT_EQ(p.flatten().size(), p.parameter_count());
}
