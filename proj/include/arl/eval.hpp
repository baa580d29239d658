#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "arl/ambiguity.hpp"
#include "arl/corpus.hpp"
#include "arl/similarity.hpp"
#include "arl/trainer.hpp"

namespace arl {

inline constexpr std::array<std::size_t, 4> kRecallCutoffs{1, 5, 10, 100};

struct RecallReport {
  std::map<std::size_t, double> r_at;  // K -> fraction of queries
  double sum_r = 0.0;                  // percent points

  nlohmann::json to_json() const {
    return {{"r1", r_at.at(1)}, {"r5", r_at.at(5)}, {"r10", r_at.at(10)},
            {"r100", r_at.at(100)}, {"sumr", sum_r}};
  }
};

// Two-branch retrieval score: (s_theta + s_phi) / 2.
inline double fused_score(const EncoderParams& theta, const EncoderParams& phi, const Mat& words,
                          const Mat& frames) {
  const double a = retrieval_score(encode_text(theta, words), encode_video(theta, frames)).score;
  const double b = retrieval_score(encode_text(phi, words), encode_video(phi, frames)).score;
  return 0.5 * (a + b);
}

// Zero-based position of `target` when videos are sorted by descending
// score with ties to the lower index.
inline std::size_t rank_of(const Mat& scores, std::size_t query, std::size_t target) {
  const auto q = static_cast<Eigen::Index>(query);
  const double s = scores(q, static_cast<Eigen::Index>(target));
  std::size_t rank = 0;
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    const double x = scores(q, j);
    if (x > s || (x == s && static_cast<std::size_t>(j) < target)) ++rank;
  }
  return rank;
}

// R@K from a query x video score matrix. K beyond N_v saturates.
inline RecallReport recall_from_scores(const Mat& scores, const std::vector<std::uint32_t>& pairing) {
  RecallReport r;
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < pairing.size(); ++i) ranks.push_back(rank_of(scores, i, pairing[i]));
  for (auto k : kRecallCutoffs) {
    std::size_t hits = 0;
    for (auto rank : ranks) hits += rank < k;
    r.r_at[k] = ranks.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ranks.size());
    r.sum_r += 100.0 * r.r_at[k];
  }
  return r;
}

inline Mat branch_scores(const CorpusEmbeddings& e) {
  Mat s(static_cast<Eigen::Index>(e.queries.size()), static_cast<Eigen::Index>(e.videos.size()));
  for (std::size_t i = 0; i < e.queries.size(); ++i)
    for (std::size_t j = 0; j < e.videos.size(); ++j)
      s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          retrieval_score(e.queries[i], e.videos[j]).score;
  return s;
}

inline Mat fused_scores(const DualBranchState& state, const FeatureCorpus& corpus) {
  const Mat a = branch_scores(embed_corpus(state.theta.params, corpus));
  const Mat b = branch_scores(embed_corpus(state.phi.params, corpus));
  return 0.5 * (a + b);
}

inline RecallReport evaluate(const DualBranchState& state, const FeatureCorpus& corpus) {
  return recall_from_scores(fused_scores(state, corpus), corpus.pairing);
}

inline void write_report_json(const RecallReport& r, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f << r.to_json().dump(2) << "\n";
}

// ---- audit -------------------------------------------------------------

inline constexpr std::size_t kHistogramBins = 50;

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> mass;  // sums to 1 when the sample is non-empty
};

// Uniform bins over [lo, hi]; the top edge belongs to the last bin.
inline Histogram histogram(const std::vector<double>& xs, double lo, double hi,
                           std::size_t bins = kHistogramBins) {
  Histogram h{lo, hi, std::vector<double>(bins, 0.0)};
  if (xs.empty()) return h;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double x : xs) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((x - lo) / width) : 0;
    h.mass[std::min(b, bins - 1)] += 1.0;
  }
  for (auto& m : h.mass) m /= static_cast<double>(xs.size());
  return h;
}

struct DetectionQuality {
  std::size_t detected = 0;
  std::size_t planted = 0;
  std::size_t true_positives = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the ratio has an empty denominator; the value is reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

inline DetectionQuality detection_quality(const std::vector<QueryVideoPair>& detected,
                                          const std::vector<QueryVideoPair>& planted) {
  DetectionQuality q;
  q.detected = detected.size();
  q.planted = planted.size();
  std::vector<QueryVideoPair> hit;
  std::set_intersection(detected.begin(), detected.end(), planted.begin(), planted.end(),
                        std::back_inserter(hit));
  q.true_positives = hit.size();
  q.precision_undefined = detected.empty();
  q.recall_undefined = planted.empty();
  q.precision = detected.empty() ? 0.0 : static_cast<double>(hit.size()) / static_cast<double>(detected.size());
  q.recall = planted.empty() ? 0.0 : static_cast<double>(hit.size()) / static_cast<double>(planted.size());
  q.f1 = q.precision + q.recall > 0.0 ? 2.0 * q.precision * q.recall / (q.precision + q.recall) : 0.0;
  return q;
}

struct AuditReport {
  std::uint32_t branch = 0;
  Thresholds thresholds;
  Histogram positive_similarity, unpaired_similarity;
  Histogram positive_uncertainty, unpaired_uncertainty;
  double mean_positive_similarity = 0.0, mean_unpaired_similarity = 0.0;
  double mean_positive_uncertainty = 0.0, mean_unpaired_uncertainty = 0.0;
  std::vector<QueryVideoPair> detected;  // sorted
  DetectionQuality quality;
  bool has_ground_truth = false;
  std::vector<ThresholdRecord> threshold_history;
};

// Corpus-wide detection under given tables and thresholds: every unpaired
// (query, video) with s > tau_s and u > tau_u.
inline std::vector<QueryVideoPair> detect_corpus_ambiguity(const CorpusSimilarityMap& map,
                                                           const FeatureCorpus& corpus,
                                                           const UncertaintyTables& tables,
                                                           const Thresholds& th) {
  std::vector<QueryVideoPair> out;
  for (std::size_t i = 0; i < corpus.n_queries; ++i)
    for (std::size_t j = 0; j < corpus.n_videos; ++j) {
      if (corpus.pairing[i] == j) continue;
      const auto r = map.score(i, j);
      if (r.score > th.tau_s && pair_uncertainty(tables, i, j, r.best_frame) > th.tau_u)
        out.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    }
  return out;
}

// Pairwise s and u over every train pair for one branch, split into positive
// and unpaired, with the detection rule applied at the branch's current
// parameters.
inline AuditReport audit(const DualBranchState& state, const FeatureCorpus& train,
                         std::uint32_t branch = 0, std::optional<Thresholds> forced = std::nullopt) {
  if (branch > 1) throw ConfigError("audit: branch must be 0 (theta) or 1 (phi)");
  const auto& params = state.branch(branch).params;
  const auto map = build_corpus_map(params, train, state.epoch);
  const auto tables = compute_uncertainty(map);
  AuditReport a;
  a.branch = branch;
  a.thresholds = forced ? *forced : compute_thresholds(map, train, tables);
  a.threshold_history = state.threshold_history;

  std::vector<double> ps, us, pu, uu;
  for (std::size_t i = 0; i < train.n_queries; ++i)
    for (std::size_t j = 0; j < train.n_videos; ++j) {
      const auto r = map.score(i, j);
      const double u = pair_uncertainty(tables, i, j, r.best_frame);
      if (train.pairing[i] == j) {
        ps.push_back(r.score);
        pu.push_back(u);
      } else {
        us.push_back(r.score);
        uu.push_back(u);
      }
    }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  auto range = [](const std::vector<double>& a, const std::vector<double>& b) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto* v : {&a, &b})
      for (double x : *v) lo = std::min(lo, x), hi = std::max(hi, x);
    return std::pair{lo, hi};
  };
  const auto [slo, shi] = range(ps, us);
  const auto [ulo, uhi] = range(pu, uu);
  a.positive_similarity = histogram(ps, slo, shi);
  a.unpaired_similarity = histogram(us, slo, shi);
  a.positive_uncertainty = histogram(pu, ulo, uhi);
  a.unpaired_uncertainty = histogram(uu, ulo, uhi);
  a.mean_positive_similarity = mean(ps);
  a.mean_unpaired_similarity = mean(us);
  a.mean_positive_uncertainty = mean(pu);
  a.mean_unpaired_uncertainty = mean(uu);

  a.detected = detect_corpus_ambiguity(map, train, tables, a.thresholds);
  a.has_ground_truth = train.planted_ambiguity.has_value();
  a.quality = detection_quality(a.detected, train.planted_ambiguity.value_or(std::vector<QueryVideoPair>{}));
  return a;
}

// Sectioned CSV: each row starts with a record tag.
inline std::string audit_csv(const AuditReport& a, const FeatureCorpus* train = nullptr) {
  std::string out = "record,a,b,c,d,e\n";
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  for (const auto& t : a.threshold_history)
    out += "epoch_thresholds," + std::to_string(t.epoch) + "," + std::to_string(t.branch) + "," +
           num(t.tau_s) + "," + num(t.tau_u) + ",\n";
  auto metric = [&](const std::string& name, const std::string& value) {
    out += "metric," + name + "," + value + ",,,\n";
  };
  metric("branch", std::to_string(a.branch));
  metric("tau_s", num(a.thresholds.tau_s));
  metric("tau_u", num(a.thresholds.tau_u));
  metric("mean_positive_similarity", num(a.mean_positive_similarity));
  metric("mean_unpaired_similarity", num(a.mean_unpaired_similarity));
  metric("mean_positive_uncertainty", num(a.mean_positive_uncertainty));
  metric("mean_unpaired_uncertainty", num(a.mean_unpaired_uncertainty));
  metric("detected_pairs", std::to_string(a.quality.detected));
  metric("planted_pairs", std::to_string(a.quality.planted));
  metric("true_positives", std::to_string(a.quality.true_positives));
  metric("precision", num(a.quality.precision));
  metric("recall", num(a.quality.recall));
  metric("f1", num(a.quality.f1));
  metric("precision_undefined", a.quality.precision_undefined ? "1" : "0");
  metric("recall_undefined", a.quality.recall_undefined ? "1" : "0");
  metric("has_ground_truth", a.has_ground_truth ? "1" : "0");
  for (const auto& [name, h] :
       std::array<std::pair<const char*, const Histogram*>, 4>{{{"positive_similarity", &a.positive_similarity},
                                                                {"unpaired_similarity", &a.unpaired_similarity},
                                                                {"positive_uncertainty", &a.positive_uncertainty},
                                                                {"unpaired_uncertainty", &a.unpaired_uncertainty}}}) {
    const double width = (h->hi - h->lo) / static_cast<double>(h->mass.size());
    for (std::size_t b = 0; b < h->mass.size(); ++b)
      out += std::string("histogram,") + name + "," + std::to_string(b) + "," +
             num(h->lo + width * static_cast<double>(b)) + "," +
             num(h->lo + width * static_cast<double>(b + 1)) + "," + num(h->mass[b]) + "\n";
  }
  std::vector<QueryVideoPair> planted;
  if (train && train->planted_ambiguity) planted = *train->planted_ambiguity;
  for (const auto& p : a.detected) {
    const bool is_planted = std::binary_search(planted.begin(), planted.end(), p);
    out += "ambiguous_pair," + std::to_string(p.first) + "," + std::to_string(p.second) + "," +
           (is_planted ? "1" : "0") + ",,\n";
  }
  return out;
}

}  // namespace arl
