#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "arl/binary_io.hpp"
#include "arl/error.hpp"
#include "arl/linalg.hpp"
#include "arl/rng.hpp"

namespace arl {

enum class Split : std::uint8_t { train = 0, test = 1 };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

using QueryVideoPair = std::pair<std::uint32_t, std::uint32_t>;

// Pre-extracted word and frame features with the one-to-one pairing map.
// Features are stored row-major as 32-bit floats:
//   text_features[(i * query_len + l) * text_dim + c]
//   video_features[(j * video_len + k) * video_dim + c]
struct FeatureCorpus {
  std::size_t n_queries = 0;
  std::size_t n_videos = 0;
  std::size_t query_len = 0;
  std::size_t video_len = 0;
  std::size_t text_dim = 0;
  std::size_t video_dim = 0;
  std::vector<float> text_features;
  std::vector<float> video_features;
  std::vector<std::uint32_t> pairing;
  Split split = Split::train;
  // Sorted ascending; synthetic corpora only.
  std::optional<std::vector<QueryVideoPair>> planted_ambiguity;

  bool operator==(const FeatureCorpus&) const = default;

  ConstFloatRows text_rows(std::size_t i) const {
    return ConstFloatRows(text_features.data() + i * query_len * text_dim,
                          static_cast<Eigen::Index>(query_len), static_cast<Eigen::Index>(text_dim));
  }
  ConstFloatRows video_rows(std::size_t j) const {
    return ConstFloatRows(video_features.data() + j * video_len * video_dim,
                          static_cast<Eigen::Index>(video_len), static_cast<Eigen::Index>(video_dim));
  }
  Mat text(std::size_t i) const { return text_rows(i).cast<double>(); }
  Mat video(std::size_t j) const { return video_rows(j).cast<double>(); }

  // Throws FormatError describing the first violated invariant.
  void validate() const {
    if (n_queries == 0 || n_videos == 0 || query_len == 0 || video_len == 0 || text_dim == 0 ||
        video_dim == 0) {
      throw FormatError("corpus dimensions must all be positive");
    }
    if (text_features.size() != n_queries * query_len * text_dim) {
      throw FormatError("text_features size does not match N_q*L_q*d_t");
    }
    if (video_features.size() != n_videos * video_len * video_dim) {
      throw FormatError("video_features size does not match N_v*L_v*d_v");
    }
    if (pairing.size() != n_queries) throw FormatError("pairing must cover every query");
    for (auto j : pairing) {
      if (j >= n_videos) throw FormatError("pairing references video out of range");
    }
    auto finite = [](float x) { return std::isfinite(x); };
    if (!std::all_of(text_features.begin(), text_features.end(), finite)) {
      throw FormatError("text_features contain non-finite values");
    }
    if (!std::all_of(video_features.begin(), video_features.end(), finite)) {
      throw FormatError("video_features contain non-finite values");
    }
    if (planted_ambiguity) {
      for (const auto& [q, v] : *planted_ambiguity) {
        if (q >= n_queries || v >= n_videos) {
          throw FormatError("planted_ambiguity references index out of range");
        }
        if (pairing[q] == v) throw FormatError("planted_ambiguity contains a positive pair");
      }
      if (!std::is_sorted(planted_ambiguity->begin(), planted_ambiguity->end()) ||
          std::adjacent_find(planted_ambiguity->begin(), planted_ambiguity->end()) !=
              planted_ambiguity->end()) {
        throw FormatError("planted_ambiguity must be sorted and unique");
      }
    }
  }
};

// Parameters of the planted-ambiguity generator.
struct CorpusSpec {
  std::size_t n_queries = 200;
  std::size_t n_videos = 100;
  std::size_t query_len = 8;
  std::size_t video_len = 16;
  std::size_t text_dim = 32;
  std::size_t video_dim = 32;
  std::uint64_t seed = 0;
  std::size_t segments_per_video = 4;
  double ambiguity_rate = 0.3;
  double noise_scale = 0.1;
  // Dimension of the shared concept_id space the features are projected from.
  std::size_t latent_dim = 16;
  // Number of other videos an ambiguous query's concept_id is planted into.
  std::size_t plant_fanout = 5;
  // Plant into segments some query of the target video describes, so both
  // videos carry a caption of the shared event. Off: prefer undescribed
  // segments.
  bool plant_into_captioned = true;

  void validate() const {
    if (n_queries == 0 || n_videos == 0 || query_len == 0 || video_len == 0 || text_dim == 0 ||
        video_dim == 0 || latent_dim == 0) {
      throw ConfigError("corpus spec: all sizes must be positive");
    }
    if (segments_per_video == 0 || segments_per_video > video_len) {
      throw ConfigError("corpus spec: need video_len >= segments_per_video >= 1");
    }
    if (!(ambiguity_rate >= 0.0 && ambiguity_rate <= 1.0)) {
      throw ConfigError("corpus spec: ambiguity_rate must lie in [0, 1]");
    }
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
      throw ConfigError("corpus spec: noise_scale must be finite and nonnegative");
    }
  }
};

// Ground-truth construction of a synthetic corpus, before noise.
struct SyntheticLayout {
  // concept_id id held by each segment of each video
  std::vector<std::vector<std::size_t>> video_segments;
  // concept_id id each query was generated from
  std::vector<std::size_t> query_concept;
  // first frame of each segment, plus video_len as sentinel
  std::vector<std::size_t> segment_bounds;
};

struct SyntheticCorpus {
  FeatureCorpus corpus;
  SyntheticLayout layout;
};

namespace detail {

inline std::vector<std::size_t> segment_bounds(std::size_t video_len, std::size_t segments) {
  std::vector<std::size_t> b(segments + 1);
  for (std::size_t s = 0; s <= segments; ++s) b[s] = s * video_len / segments;
  return b;
}

inline Mat gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal();
  return m;
}

}  // namespace detail

// Builds a corpus where each video is a sequence of latent-concept_id segments
// and each query describes one segment of its paired video. An ambiguous
// query (probability `ambiguity_rate`) has its concept_id copied into
// `plant_fanout` other videos, into a segment chosen per
// `plant_into_captioned`. Train and test splits of one spec share the
// projection maps (the "feature extractor") but draw independent concepts.
//
// planted_ambiguity lists every unpaired (query, video) whose video holds the
// query's concept_id after all plants, so it is exact even when plants overlap.
inline SyntheticCorpus generate_synthetic_with_layout(const CorpusSpec& spec,
                                                      Split split = Split::train) {
  spec.validate();
  const std::size_t nq = spec.n_queries, nv = spec.n_videos, spv = spec.segments_per_video;

  Rng world(mix_seed(spec.seed, 0x70726f6aULL));
  const Mat text_map = detail::gaussian_matrix(world, spec.text_dim, spec.latent_dim);
  const Mat video_map = detail::gaussian_matrix(world, spec.video_dim, spec.latent_dim);

  Rng rng(mix_seed(spec.seed, 1 + static_cast<std::uint64_t>(split)));

  SyntheticLayout layout;
  layout.segment_bounds = detail::segment_bounds(spec.video_len, spv);
  layout.video_segments.assign(nv, std::vector<std::size_t>(spv));
  std::size_t next_concept = 0;
  for (auto& segs : layout.video_segments)
    for (auto& c : segs) c = next_concept++;

  std::vector<std::uint32_t> pairing(nq);
  std::vector<std::size_t> query_slot(nq);
  std::vector<std::vector<bool>> owned(nv, std::vector<bool>(spv, false));
  for (std::size_t i = 0; i < nq; ++i) {
    pairing[i] = static_cast<std::uint32_t>(i % nv);
    query_slot[i] = static_cast<std::size_t>(rng.below(spv));
    owned[pairing[i]][query_slot[i]] = true;
  }

  for (std::size_t i = 0; i < nq; ++i) {
    if (!rng.bernoulli(spec.ambiguity_rate)) continue;
    const std::size_t concept_id = layout.video_segments[pairing[i]][query_slot[i]];
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < nv; ++j)
      if (j != pairing[i]) others.push_back(j);
    rng.shuffle(others);
    const std::size_t fanout = std::min(spec.plant_fanout, others.size());
    for (std::size_t t = 0; t < fanout; ++t) {
      auto& segs = layout.video_segments[others[t]];
      if (std::find(segs.begin(), segs.end(), concept_id) != segs.end()) continue;
      std::vector<std::size_t> preferred;
      for (std::size_t s = 0; s < spv; ++s)
        if (owned[others[t]][s] == spec.plant_into_captioned) preferred.push_back(s);
      const std::size_t slot = preferred.empty()
                                   ? static_cast<std::size_t>(rng.below(spv))
                                   : preferred[static_cast<std::size_t>(rng.below(preferred.size()))];
      segs[slot] = concept_id;
    }
  }

  // Concept vectors are drawn after planting so every surviving id gets one
  // random unit vector, in id order.
  std::vector<Vec> concepts(next_concept);
  for (auto& c : concepts) {
    c.resize(static_cast<Eigen::Index>(spec.latent_dim));
    for (Eigen::Index k = 0; k < c.size(); ++k) c[k] = rng.normal();
    c.normalize();
  }

  FeatureCorpus out;
  out.n_queries = nq;
  out.n_videos = nv;
  out.query_len = spec.query_len;
  out.video_len = spec.video_len;
  out.text_dim = spec.text_dim;
  out.video_dim = spec.video_dim;
  out.split = split;
  out.pairing = pairing;
  out.text_features.resize(nq * spec.query_len * spec.text_dim);
  out.video_features.resize(nv * spec.video_len * spec.video_dim);

  layout.query_concept.resize(nq);
  for (std::size_t i = 0; i < nq; ++i) {
    const std::size_t concept_id = layout.video_segments[pairing[i]][query_slot[i]];
    layout.query_concept[i] = concept_id;
    const Vec clean = text_map * concepts[concept_id];
    for (std::size_t l = 0; l < spec.query_len; ++l)
      for (std::size_t c = 0; c < spec.text_dim; ++c)
        out.text_features[(i * spec.query_len + l) * spec.text_dim + c] = static_cast<float>(
            clean[static_cast<Eigen::Index>(c)] + spec.noise_scale * rng.normal());
  }
  for (std::size_t j = 0; j < nv; ++j) {
    for (std::size_t s = 0; s < spv; ++s) {
      const Vec clean = video_map * concepts[layout.video_segments[j][s]];
      for (std::size_t k = layout.segment_bounds[s]; k < layout.segment_bounds[s + 1]; ++k)
        for (std::size_t c = 0; c < spec.video_dim; ++c)
          out.video_features[(j * spec.video_len + k) * spec.video_dim + c] = static_cast<float>(
              clean[static_cast<Eigen::Index>(c)] + spec.noise_scale * rng.normal());
    }
  }

  std::vector<QueryVideoPair> planted;
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < nv; ++j) {
      if (j == pairing[i]) continue;
      const auto& segs = layout.video_segments[j];
      if (std::find(segs.begin(), segs.end(), layout.query_concept[i]) != segs.end())
        planted.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    }
  }
  out.planted_ambiguity = std::move(planted);
  return {std::move(out), std::move(layout)};
}

inline FeatureCorpus generate_synthetic(const CorpusSpec& spec, Split split = Split::train) {
  return generate_synthetic_with_layout(spec, split).corpus;
}

// ---- .prvc file format -----------------------------------------------------
//
//   "PRVC" | u32 version | u32 N_q N_v L_q L_v d_t d_v | u32 flags
//   f32 text_features[N_q*L_q*d_t] | f32 video_features[N_v*L_v*d_v]
//   u32 pairing[N_q]
//   if flags & kHasPlanted: u64 count | (u32 query, u32 video)[count]
//
// All integers and floats little-endian.

inline constexpr std::uint32_t kCorpusVersion = 1;
inline constexpr std::uint32_t kCorpusHasPlanted = 1u << 0;
inline constexpr std::uint32_t kCorpusTestSplit = 1u << 1;

inline void write_corpus(const FeatureCorpus& corpus, const std::string& path) {
  corpus.validate();
  io::Writer w;
  w.bytes("PRVC");
  w.u32(kCorpusVersion);
  for (std::size_t dim : {corpus.n_queries, corpus.n_videos, corpus.query_len, corpus.video_len,
                          corpus.text_dim, corpus.video_dim}) {
    if (dim > UINT32_MAX) throw FormatError("corpus dimension exceeds 32 bits");
    w.u32(static_cast<std::uint32_t>(dim));
  }
  std::uint32_t flags = 0;
  if (corpus.planted_ambiguity) flags |= kCorpusHasPlanted;
  if (corpus.split == Split::test) flags |= kCorpusTestSplit;
  w.u32(flags);
  for (float x : corpus.text_features) w.f32(x);
  for (float x : corpus.video_features) w.f32(x);
  for (auto j : corpus.pairing) w.u32(j);
  if (corpus.planted_ambiguity) {
    w.u64(corpus.planted_ambiguity->size());
    for (const auto& [q, v] : *corpus.planted_ambiguity) {
      w.u32(q);
      w.u32(v);
    }
  }
  w.save(path);
}

inline FeatureCorpus read_corpus_bytes(io::Reader r) {
  if (r.empty()) throw FormatError("empty corpus file");
  r.expect_magic("PRVC", "corpus");
  const auto version = r.u32("version");
  if (version != kCorpusVersion) {
    throw FormatError("unsupported corpus version " + std::to_string(version));
  }
  FeatureCorpus c;
  auto dim = [&](const char* name) {
    const auto v = r.u32(name);
    if (v == 0) throw FormatError(std::string("header field '") + name + "' must be positive");
    return static_cast<std::size_t>(v);
  };
  c.n_queries = dim("N_q");
  c.n_videos = dim("N_v");
  c.query_len = dim("L_q");
  c.video_len = dim("L_v");
  c.text_dim = dim("d_t");
  c.video_dim = dim("d_v");
  const auto flags = r.u32("flags");
  if (flags & ~(kCorpusHasPlanted | kCorpusTestSplit)) {
    throw FormatError("header field 'flags' has unknown bits");
  }
  c.split = (flags & kCorpusTestSplit) ? Split::test : Split::train;

  // Check each section against the remaining bytes before allocating.
  const std::size_t text_count = c.n_queries * c.query_len * c.text_dim;
  r.require(text_count, 4, "text_features");
  c.text_features.resize(text_count);
  for (auto& x : c.text_features) x = r.f32("text_features");

  const std::size_t video_count = c.n_videos * c.video_len * c.video_dim;
  r.require(video_count, 4, "video_features");
  c.video_features.resize(video_count);
  for (auto& x : c.video_features) x = r.f32("video_features");

  r.require(c.n_queries, 4, "pairing");
  c.pairing.resize(c.n_queries);
  for (auto& j : c.pairing) {
    j = r.u32("pairing");
    if (j >= c.n_videos) throw FormatError("field 'pairing' references video out of range");
  }

  if (flags & kCorpusHasPlanted) {
    const auto count = r.u64("planted_count");
    r.require(count, 8, "planted_ambiguity");
    std::vector<QueryVideoPair> planted(count);
    for (auto& [q, v] : planted) {
      q = r.u32("planted_ambiguity");
      v = r.u32("planted_ambiguity");
    }
    c.planted_ambiguity = std::move(planted);
  }
  r.expect_end();
  c.validate();
  return c;
}

inline FeatureCorpus read_corpus(const std::string& path) {
  return read_corpus_bytes(io::Reader::load(path));
}

}  // namespace arl
