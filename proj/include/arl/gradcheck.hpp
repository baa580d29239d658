#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "arl/ambiguity.hpp"
#include "arl/corpus.hpp"
#include "arl/encoder.hpp"
#include "arl/losses.hpp"
#include "arl/rng.hpp"
#include "arl/trainer.hpp"

namespace arl {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t entries = 0;
};

// Central differences over every parameter entry:
//   rel = |g - fd| / max(1, |fd|),  fd = (f(x+h) - f(x-h)) / 2h
template <typename Objective>
GradCheckResult finite_difference_check(const EncoderParams& params, Objective&& objective,
                                        const GradientTape& analytic, double step = 1e-4) {
  GradCheckResult r;
  EncoderParams probe = params;
  const auto g = analytic.flatten();
  std::size_t at = 0;
  probe.for_each_tensor([&](const char* name, double* data, Eigen::Index n) {
    for (Eigen::Index k = 0; k < n; ++k, ++at) {
      const double saved = data[k];
      data[k] = saved + step;
      const double up = objective(probe);
      data[k] = saved - step;
      const double down = objective(probe);
      data[k] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double rel = std::abs(g[at] - fd) / std::max(1.0, std::abs(fd));
      ++r.entries;
      if (rel >= r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_tensor = name;
      }
    }
  });
  return r;
}

// A small random problem: corpus, parameters, one batch and ambiguity sets
// with both ambiguous and negative members where the sizes allow.
struct GradCheckInstance {
  FeatureCorpus corpus;
  EncoderParams params;
  Batch batch;
  AmbiguitySets sets;
  LossConfig loss;
};

namespace detail {

// Distance from the nearest switch of a hinge: the hinge edge itself and a
// change of hardest member.
inline double hinge_clearance(const AnchorScores& a, std::size_t positive,
                              const std::vector<std::size_t>& contrast, double margin) {
  if (contrast.empty()) return INFINITY;
  std::vector<double> v;
  for (auto x : contrast) v.push_back(a.values[x]);
  std::sort(v.rbegin(), v.rend());
  double d = std::abs(margin + v[0] - a.values[positive]);
  if (v.size() > 1) d = std::min(d, v[0] - v[1]);
  return d;
}

// Smallest distance of any piecewise decision (ReLU, best frame, hinge,
// hardest member) from its switch point.
inline double kink_clearance(const GradCheckInstance& g, const BatchForward& f) {
  double d = INFINITY;
  for (const auto& t : f.texts) d = std::min(d, t.seq.pre_act.cwiseAbs().minCoeff());
  for (const auto& v : f.videos) d = std::min(d, v.pre_act.cwiseAbs().minCoeff());
  const auto& s = f.sims;
  for (std::size_t i = 0; i < s.n_queries; ++i)
    for (std::size_t c = 0; c < s.n_videos; ++c) {
      const auto a = text_to_frame(s, i, c);
      auto v = a.values;
      std::sort(v.rbegin(), v.rend());
      if (v.size() > 1) d = std::min(d, v[0] - v[1]);
    }
  const auto& vs = g.sets.video;
  const auto& L = g.loss;
  for (std::size_t i = 0; i < g.batch.rows(); ++i) {
    const std::size_t c = g.batch.positive_column[i];
    const auto t2v = text_to_video(s, i);
    const auto v2t = video_to_text(s, c);
    d = std::min({d, hinge_clearance(v2t, i, vs.ambiguous_queries[c], L.margin_ambiguous),
                  hinge_clearance(v2t, i, vs.negative_queries[c], L.margin),
                  hinge_clearance(t2v, c, vs.ambiguous_videos[i], L.margin_ambiguous),
                  hinge_clearance(t2v, c, vs.negative_videos[i], L.margin)});
    if (g.sets.frames.empty()) continue;
    const auto& fr = g.sets.frames[i];
    const auto t2f = text_to_frame(s, i, c);
    const auto f2t = frame_to_text(s, c, fr.selected_frame);
    d = std::min({d, hinge_clearance(f2t, i, fr.ambiguous_queries, L.margin_ambiguous),
                  hinge_clearance(f2t, i, fr.negative_queries, L.margin),
                  hinge_clearance(t2f, fr.selected_frame, fr.ambiguous_frames, L.margin_ambiguous),
                  hinge_clearance(t2f, fr.selected_frame, fr.negative_frames, L.margin)});
  }
  return d;
}

}  // namespace detail

inline GradCheckInstance draw_grad_check_instance(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x67726164ULL));
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
  };
  GradCheckInstance g;
  auto& c = g.corpus;
  c.n_videos = pick(2, 4);
  c.n_queries = pick(c.n_videos, 6);
  c.query_len = pick(1, 3);
  c.video_len = pick(1, 4);
  c.text_dim = pick(2, 5);
  c.video_dim = pick(2, 5);
  c.text_features.resize(c.n_queries * c.query_len * c.text_dim);
  c.video_features.resize(c.n_videos * c.video_len * c.video_dim);
  for (auto& x : c.text_features) x = static_cast<float>(rng.normal());
  for (auto& x : c.video_features) x = static_cast<float>(rng.normal());
  for (std::size_t i = 0; i < c.n_queries; ++i)
    c.pairing.push_back(static_cast<std::uint32_t>(i < c.n_videos ? i : rng.below(c.n_videos)));

  // Layer norm over fewer than four features is too curved for h = 1e-4
  // central differences to resolve; the analytic gradient is fine there.
  const EncoderDims dims{c.text_dim, c.video_dim, pick(4, 8), c.query_len, c.video_len};
  g.params = init_encoder(dims, rng.next_u64());
  // Move norm and pooling parameters off their initial constants.
  for (auto* a : {&g.params.attn_text, &g.params.attn_video})
    for (Eigen::Index k = 0; k < a->norm_scale.size(); ++k) {
      a->norm_scale[k] += 0.3 * rng.normal();
      a->norm_shift[k] += 0.3 * rng.normal();
    }
  g.params.pool_bias[0] = rng.normal();

  std::vector<std::size_t> rows(c.n_queries);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  rng.shuffle(rows);
  rows.resize(pick(2, std::min<std::size_t>(4, c.n_queries)));
  g.batch = make_batch(c, rows);

  g.loss.margin = rng.uniform(0.2, 0.6);
  g.loss.margin_ambiguous = g.loss.margin * rng.uniform(0.2, 0.8);
  g.loss.lambda_nce = rng.uniform(0.2, 1.0);

  // Thresholds at the median batch score and uncertainty mix the sets.
  const auto map = build_corpus_map(g.params, c);
  const auto tables = compute_uncertainty(map);
  const auto f = forward_batch(g.params, c, g.batch);
  std::vector<double> s(f.sims.frame_sims.begin(), f.sims.frame_sims.end());
  std::vector<double> u(tables.video.data(), tables.video.data() + tables.video.size());
  for (Eigen::Index i = 0; i < tables.query.size(); ++i) u.push_back(tables.query[i]);
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2), s.end());
  std::nth_element(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(u.size() / 2), u.end());
  const Thresholds th{s[s.size() / 2], u[u.size() / 2], 0};
  g.sets = detect_ambiguity(g.batch, f.sims, tables, th, true);
  return g;
}

// Central differences straddling a kink measure the jump, not the gradient,
// so draws with any switch closer than 1e-3 are redrawn.
inline GradCheckInstance random_grad_check_instance(std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    auto g = draw_grad_check_instance(mix_seed(seed, attempt));
    const auto f = forward_batch(g.params, g.corpus, g.batch);
    if (detail::kink_clearance(g, f) >= 1e-3) return g;
  }
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t instances = 0;
  std::size_t entries = 0;
};

// Analytic gradient of grand_total (video + frame objectives) against
// central differences on `instances` random problems.
inline GradCheckReport run_grad_check(std::uint64_t seed, std::size_t instances = 20,
                                      double step = 1e-4) {
  GradCheckReport rep;
  for (std::size_t n = 0; n < instances; ++n) {
    const auto g = random_grad_check_instance(mix_seed(seed, n));
    const auto f = forward_batch(g.params, g.corpus, g.batch);
    const auto analytic = loss_and_gradient(g.params, f, g.batch, g.sets, g.loss).grad;
    const auto r = finite_difference_check(
        g.params,
        [&](const EncoderParams& p) { return batch_objective(p, g.corpus, g.batch, g.sets, g.loss); },
        analytic, step);
    ++rep.instances;
    rep.entries += r.entries;
    if (r.max_rel_error >= rep.max_rel_error) {
      rep.max_rel_error = r.max_rel_error;
      rep.worst_tensor = r.worst_tensor;
    }
  }
  return rep;
}

}  // namespace arl
