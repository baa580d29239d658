#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "arl/ambiguity.hpp"
#include "arl/binary_io.hpp"
#include "arl/corpus.hpp"
#include "arl/encoder.hpp"
#include "arl/error.hpp"
#include "arl/losses.hpp"
#include "arl/rng.hpp"
#include "arl/similarity.hpp"

namespace arl {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::size_t warmup_epochs = 3;
  std::size_t embed_dim = 32;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  bool cross_model = true;
  bool frame_level = true;
  // Branch initialization seeds; derived from `seed` when unset.
  std::optional<std::uint64_t> theta_seed;
  std::optional<std::uint64_t> phi_seed;
  LossConfig loss;

  std::uint64_t branch_seed(std::size_t branch) const {
    const auto& explicit_seed = branch == 0 ? theta_seed : phi_seed;
    return explicit_seed ? *explicit_seed : mix_seed(seed, 0x6272616e6368ULL + branch);
  }

  void validate() const {
    if (batch_size < 2) throw ConfigError("train: batch_size must be at least 2");
    if (epochs < warmup_epochs) throw ConfigError("train: epochs must be >= warmup_epochs");
    if (embed_dim == 0) throw ConfigError("train: embed_dim must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("train: learning_rate must be finite and nonnegative");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw ConfigError("train: adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be nonnegative");
    loss.validate();
  }
};

// Bias-corrected first/second moment estimates.
struct AdamState {
  GradientTape first;
  GradientTape second;
  std::uint64_t step = 0;

  static AdamState for_params(const EncoderParams& p) {
    return {GradientTape::zeros_like(p), GradientTape::zeros_like(p), 0};
  }
};

struct Branch {
  EncoderParams params;
  AdamState adam;
  std::uint64_t seed = 0;

  static Branch init(const EncoderDims& dims, std::uint64_t seed) {
    Branch b;
    b.params = init_encoder(dims, seed);
    b.adam = AdamState::for_params(b.params);
    b.seed = seed;
    return b;
  }
};

struct ThresholdRecord {
  std::int64_t epoch = 0;  // 1-based epoch the thresholds were used in
  std::uint32_t branch = 0;
  double tau_s = 0.0;
  double tau_u = 0.0;
};

// theta and phi share architecture and data order; they differ only in
// initialization seed.
struct DualBranchState {
  Branch theta;
  Branch phi;
  std::int64_t epoch = 0;  // completed epochs
  std::uint64_t data_seed = 0;
  std::vector<ThresholdRecord> threshold_history;

  Branch& branch(std::size_t b) { return b == 0 ? theta : phi; }
  const Branch& branch(std::size_t b) const { return b == 0 ? theta : phi; }
};

inline EncoderDims encoder_dims_for(const FeatureCorpus& corpus, std::size_t embed_dim) {
  return {corpus.text_dim, corpus.video_dim, embed_dim, corpus.query_len, corpus.video_len};
}

inline DualBranchState init_state(const FeatureCorpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  const auto dims = encoder_dims_for(corpus, cfg.embed_dim);
  DualBranchState s;
  s.theta = Branch::init(dims, cfg.branch_seed(0));
  s.phi = Branch::init(dims, cfg.branch_seed(1));
  s.data_seed = cfg.seed;
  return s;
}

// ---- one step ----------------------------------------------------------

struct BatchForward {
  std::vector<TextForward> texts;
  std::vector<SequenceCache> videos;
  std::vector<Vec> queries;
  std::vector<Mat> frames;
  BatchSimilarity sims;
};

inline BatchForward forward_batch(const EncoderParams& p, const FeatureCorpus& corpus,
                                  const Batch& batch) {
  BatchForward f;
  for (auto q : batch.queries) {
    f.texts.push_back(forward_text(p, corpus.text(q)));
    f.queries.push_back(f.texts.back().embedding);
  }
  for (auto v : batch.videos) {
    f.videos.push_back(forward_video(p, corpus.video(v)));
    f.frames.push_back(f.videos.back().out);
  }
  f.sims = batch_similarity(f.queries, f.frames);
  return f;
}

struct StepResult {
  LossBreakdown loss;
  GradientTape grad;
};

inline StepResult loss_and_gradient(const EncoderParams& p, const BatchForward& f, const Batch& batch,
                                    const AmbiguitySets& sets, const LossConfig& cfg) {
  FrameAdjoint d_sims(f.sims.frame_sims.size(), 0.0);
  StepResult r;
  r.loss = loss_total(f.sims, batch, sets, cfg, &d_sims);
  if (!std::isfinite(r.loss.grand_total)) throw NumericalError("non-finite loss");
  const auto adj = similarity_backward(f.queries, f.frames, f.sims, d_sims);
  r.grad = GradientTape::zeros_like(p);
  for (std::size_t i = 0; i < f.texts.size(); ++i) backward_text(p, f.texts[i], adj.queries[i], r.grad);
  for (std::size_t c = 0; c < f.videos.size(); ++c) backward_video(p, f.videos[c], adj.videos[c], r.grad);
  return r;
}

// Loss value only; the closure the finite-difference checks perturb.
inline double batch_objective(const EncoderParams& p, const FeatureCorpus& corpus, const Batch& batch,
                              const AmbiguitySets& sets, const LossConfig& cfg) {
  const auto f = forward_batch(p, corpus, batch);
  return loss_total(f.sims, batch, sets, cfg).grand_total;
}

inline void adam_update(Branch& b, const GradientTape& grad, const TrainConfig& cfg) {
  auto& st = b.adam;
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.step));
  const auto g = grad.flatten();
  auto m = st.first.flatten();
  auto v = st.second.flatten();
  std::size_t at = 0;
  b.params.for_each_tensor([&](const char*, double* theta, Eigen::Index n) {
    for (Eigen::Index k = 0; k < n; ++k, ++at) {
      const double gk = g[at] + cfg.weight_decay * theta[k];
      m[at] = cfg.adam_beta1 * m[at] + (1.0 - cfg.adam_beta1) * gk;
      v[at] = cfg.adam_beta2 * v[at] + (1.0 - cfg.adam_beta2) * gk * gk;
      theta[k] -= cfg.learning_rate * (m[at] / bc1) / (std::sqrt(v[at] / bc2) + cfg.adam_eps);
    }
  });
  at = 0;
  st.first.for_each_tensor([&](const char*, double* data, Eigen::Index n) {
    for (Eigen::Index k = 0; k < n; ++k) data[k] = m[at++];
  });
  at = 0;
  st.second.for_each_tensor([&](const char*, double* data, Eigen::Index n) {
    for (Eigen::Index k = 0; k < n; ++k) data[k] = v[at++];
  });
}

// Loss on the provided sets (own or peer), backward, one optimizer update.
inline StepResult step(const BatchForward& f, const Batch& batch, const AmbiguitySets& sets,
                       Branch& branch, const TrainConfig& cfg) {
  StepResult r = loss_and_gradient(branch.params, f, batch, sets, cfg.loss);
  adam_update(branch, r.grad, cfg);
  return r;
}

// ---- epochs --------------------------------------------------------------

// Seeded permutation of the positive pairs; the trailing partial batch is
// dropped.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_queries,
                                                           std::size_t batch_size,
                                                           std::uint64_t data_seed,
                                                           std::int64_t epoch) {
  std::vector<std::size_t> order(n_queries);
  for (std::size_t i = 0; i < n_queries; ++i) order[i] = i;
  Rng rng(mix_seed(data_seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start + batch_size <= n_queries; start += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  return out;
}

struct EpochLossRow {
  std::int64_t epoch = 0;  // 1-based
  std::uint32_t branch = 0;
  bool warmup = false;
  LossBreakdown mean;
  double mean_ambiguous_videos = 0.0;   // |A_i^q| per row
  double mean_ambiguous_queries = 0.0;  // |A_j^v| per column
  double mean_ambiguous_frames = 0.0;   // per positive pair
};

struct TrainLog {
  std::vector<EpochLossRow> losses;
  std::vector<ThresholdRecord> thresholds;

  bool operator==(const TrainLog& o) const { return to_csv() == o.to_csv(); }

  std::string to_csv() const {
    std::string out =
        "kind,epoch,branch,nce_t2v,nce_v2t,trip_a,trip_n,video_total,frame_nce_t2f,frame_nce_f2t,"
        "frame_trip_a,frame_trip_n,frame_total,grand_total,mean_ambiguous_videos,"
        "mean_ambiguous_queries,mean_ambiguous_frames,tau_s,tau_u\n";
    char buf[64];
    auto num = [&](double x) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      return std::string(buf);
    };
    for (const auto& t : thresholds) {
      out += "thresholds," + std::to_string(t.epoch) + "," + std::to_string(t.branch) +
             ",,,,,,,,,,,,,,," + num(t.tau_s) + "," + num(t.tau_u) + "\n";
    }
    for (const auto& r : losses) {
      const auto& m = r.mean;
      out += std::string(r.warmup ? "warmup" : "arl") + "," + std::to_string(r.epoch) + "," +
             std::to_string(r.branch);
      for (double x : {m.nce_t2v, m.nce_v2t, m.trip_a, m.trip_n, m.video_total, m.frame_nce_t2f,
                       m.frame_nce_f2t, m.frame_trip_a, m.frame_trip_n, m.frame_total,
                       m.grand_total, r.mean_ambiguous_videos, r.mean_ambiguous_queries,
                       r.mean_ambiguous_frames})
        out += "," + num(x);
      out += ",,\n";
    }
    return out;
  }

  void write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    f << to_csv();
  }
};

// Per-epoch detection context of one branch, computed from its parameters
// at the start of the epoch on the train split only.
struct EpochContext {
  UncertaintyTables tables;
  Thresholds thresholds;
};

inline EpochContext refresh_epoch_context(const EncoderParams& p, const FeatureCorpus& train,
                                          std::int64_t epoch) {
  const auto map = build_corpus_map(p, train, epoch);
  EpochContext ctx;
  ctx.tables = compute_uncertainty(map);
  ctx.thresholds = compute_thresholds(map, train, ctx.tables);
  return ctx;
}

namespace detail {

inline void accumulate(LossBreakdown& acc, const LossBreakdown& x) {
  acc.nce_t2v += x.nce_t2v;
  acc.nce_v2t += x.nce_v2t;
  acc.trip_a += x.trip_a;
  acc.trip_n += x.trip_n;
  acc.video_total += x.video_total;
  acc.frame_nce_t2f += x.frame_nce_t2f;
  acc.frame_nce_f2t += x.frame_nce_f2t;
  acc.frame_trip_a += x.frame_trip_a;
  acc.frame_trip_n += x.frame_trip_n;
  acc.frame_total += x.frame_total;
  acc.grand_total += x.grand_total;
}

inline void scale(LossBreakdown& acc, double s) {
  for (double* f : {&acc.nce_t2v, &acc.nce_v2t, &acc.trip_a, &acc.trip_n, &acc.video_total,
                    &acc.frame_nce_t2f, &acc.frame_nce_f2t, &acc.frame_trip_a, &acc.frame_trip_n,
                    &acc.frame_total, &acc.grand_total})
    *f *= s;
}

template <typename V>
double mean_size(const std::vector<V>& sets) {
  if (sets.empty()) return 0.0;
  double n = 0.0;
  for (const auto& s : sets) n += static_cast<double>(s.size());
  return n / static_cast<double>(sets.size());
}

// One epoch over any number of branches sharing the data order. With
// cross-model exchange (two branches), each branch trains on the sets its
// peer detected on the same batch; updates are simultaneous.
inline void run_epoch(std::vector<Branch*>& branches, const FeatureCorpus& train,
                      const TrainConfig& cfg, std::uint64_t data_seed, std::int64_t epoch,
                      TrainLog* log, std::vector<ThresholdRecord>* history) {
  const std::size_t nb = branches.size();
  const bool warmup = static_cast<std::size_t>(epoch) < cfg.warmup_epochs;
  const bool exchange = cfg.cross_model && nb == 2;
  const std::int64_t epoch1 = epoch + 1;

  std::vector<EpochContext> ctx(nb);
  if (!warmup) {
    for (std::size_t b = 0; b < nb; ++b) {
      ctx[b] = refresh_epoch_context(branches[b]->params, train, epoch1);
      ThresholdRecord rec{epoch1, static_cast<std::uint32_t>(b), ctx[b].thresholds.tau_s,
                          ctx[b].thresholds.tau_u};
      if (log) log->thresholds.push_back(rec);
      if (history) history->push_back(rec);
    }
  }

  std::vector<EpochLossRow> rows(nb);
  const auto batches = epoch_batches(train.n_queries, cfg.batch_size, data_seed, epoch);
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const Batch batch = make_batch(train, batches[bi]);
    std::vector<BatchForward> fwd;
    std::vector<AmbiguitySets> sets;
    for (std::size_t b = 0; b < nb; ++b) {
      fwd.push_back(forward_batch(branches[b]->params, train, batch));
      sets.push_back(warmup ? empty_ambiguity(batch, fwd[b].sims, false)
                            : detect_ambiguity(batch, fwd[b].sims, ctx[b].tables,
                                               ctx[b].thresholds, cfg.frame_level));
      sets[b].check(batch, train.video_len);
    }
    for (std::size_t b = 0; b < nb; ++b) {
      const AmbiguitySets& used = exchange ? sets[1 - b] : sets[b];
      StepResult r;
      try {
        r = step(fwd[b], batch, used, *branches[b], cfg);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (epoch " + std::to_string(epoch1) +
                             ", batch " + std::to_string(bi) + ", branch " + std::to_string(b) +
                             ")");
      }
      accumulate(rows[b].mean, r.loss);
      rows[b].mean_ambiguous_videos += mean_size(sets[b].video.ambiguous_videos);
      rows[b].mean_ambiguous_queries += mean_size(sets[b].video.ambiguous_queries);
      double frames = 0.0;
      for (const auto& f : sets[b].frames) frames += static_cast<double>(f.ambiguous_frames.size());
      if (!sets[b].frames.empty()) frames /= static_cast<double>(sets[b].frames.size());
      rows[b].mean_ambiguous_frames += frames;
    }
  }
  if (!log) return;
  const double inv = batches.empty() ? 0.0 : 1.0 / static_cast<double>(batches.size());
  for (std::size_t b = 0; b < nb; ++b) {
    rows[b].epoch = epoch1;
    rows[b].branch = static_cast<std::uint32_t>(b);
    rows[b].warmup = warmup;
    scale(rows[b].mean, inv);
    rows[b].mean_ambiguous_videos *= inv;
    rows[b].mean_ambiguous_queries *= inv;
    rows[b].mean_ambiguous_frames *= inv;
    log->losses.push_back(rows[b]);
  }
}

inline void check_train_inputs(const FeatureCorpus& train, const TrainConfig& cfg) {
  cfg.validate();
  if (train.split != Split::train) throw ConfigError("training requires a train-split corpus");
  if (train.n_queries < cfg.batch_size)
    throw ConfigError("train: batch_size exceeds the number of training queries");
}

}  // namespace detail

// Runs epochs state.epoch .. cfg.epochs-1 in place.
inline void continue_training(DualBranchState& state, const FeatureCorpus& train,
                              const TrainConfig& cfg, TrainLog* log = nullptr) {
  detail::check_train_inputs(train, cfg);
  if (state.theta.params.dims != encoder_dims_for(train, cfg.embed_dim))
    throw DimensionError("checkpoint architecture does not match corpus/config");
  std::vector<Branch*> branches{&state.theta, &state.phi};
  for (auto e = state.epoch; e < static_cast<std::int64_t>(cfg.epochs); ++e) {
    detail::run_epoch(branches, train, cfg, state.data_seed, e, log, &state.threshold_history);
    state.epoch = e + 1;
  }
}

struct TrainResult {
  DualBranchState state;
  TrainLog log;
};

inline TrainResult train(const FeatureCorpus& train_split, const TrainConfig& cfg) {
  TrainResult r;
  r.state = init_state(train_split, cfg);
  continue_training(r.state, train_split, cfg, &r.log);
  return r;
}

// A lone branch on its own sets: the reference trajectory a dual run
// without cross-model exchange must reproduce per branch.
inline Branch train_single_branch(const FeatureCorpus& train_split, const TrainConfig& cfg,
                                  std::uint64_t branch_seed) {
  detail::check_train_inputs(train_split, cfg);
  if (cfg.cross_model) throw ConfigError("single-branch training cannot use cross_model");
  Branch b = Branch::init(encoder_dims_for(train_split, cfg.embed_dim), branch_seed);
  std::vector<Branch*> branches{&b};
  for (std::int64_t e = 0; e < static_cast<std::int64_t>(cfg.epochs); ++e)
    detail::run_epoch(branches, train_split, cfg, cfg.seed, e, nullptr, nullptr);
  return b;
}

// ---- checkpoint ------------------------------------------------------------
//
//   "ARLK" | u32 version | u64 d_t d_v d L_q L_v | u64 data_seed | i64 epoch
//   per branch (theta, phi): u64 seed | u64 adam step
//                            | f64 params | f64 first moment | f64 second moment
//   u64 n_thresholds | (i64 epoch, u32 branch, f64 tau_s, f64 tau_u)[n]
//
// Tensors are written in EncoderParams::for_each_tensor order, column-major
// within each tensor. Little-endian throughout.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void checkpoint(const DualBranchState& s, const std::string& path) {
  io::Writer w;
  w.bytes("ARLK");
  w.u32(kCheckpointVersion);
  const auto& d = s.theta.params.dims;
  for (auto x : {d.text_dim, d.video_dim, d.embed_dim, d.query_len, d.video_len}) w.u64(x);
  w.u64(s.data_seed);
  w.i64(s.epoch);
  for (const Branch* b : {&s.theta, &s.phi}) {
    w.u64(b->seed);
    w.u64(b->adam.step);
    for (const EncoderParams* t : {static_cast<const EncoderParams*>(&b->params),
                                   static_cast<const EncoderParams*>(&b->adam.first),
                                   static_cast<const EncoderParams*>(&b->adam.second)})
      t->for_each_tensor([&](const char*, const double* data, Eigen::Index n) {
        for (Eigen::Index k = 0; k < n; ++k) w.f64(data[k]);
      });
  }
  w.u64(s.threshold_history.size());
  for (const auto& t : s.threshold_history) {
    w.i64(t.epoch);
    w.u32(t.branch);
    w.f64(t.tau_s);
    w.f64(t.tau_u);
  }
  w.save(path);
}

inline DualBranchState resume(const std::string& path) {
  auto r = io::Reader::load(path);
  if (r.empty()) throw FormatError("empty checkpoint file");
  r.expect_magic("ARLK", "checkpoint");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  EncoderDims dims;
  for (auto [field, name] : std::array<std::pair<std::size_t*, const char*>, 5>{
           {{&dims.text_dim, "d_t"},
            {&dims.video_dim, "d_v"},
            {&dims.embed_dim, "d"},
            {&dims.query_len, "L_q"},
            {&dims.video_len, "L_v"}}}) {
    const auto v = r.u64(name);
    if (v == 0 || v > (1u << 20))
      throw FormatError(std::string("checkpoint header field '") + name + "' out of range");
    *field = static_cast<std::size_t>(v);
  }
  DualBranchState s;
  s.data_seed = r.u64("data_seed");
  s.epoch = r.i64("epoch");
  if (s.epoch < 0) throw FormatError("checkpoint field 'epoch' is negative");
  for (Branch* b : {&s.theta, &s.phi}) {
    b->seed = r.u64("branch_seed");
    b->params = EncoderParams::zeros(dims);
    b->adam = AdamState::for_params(b->params);
    b->adam.step = r.u64("adam_step");
    r.require(3 * b->params.parameter_count(), 8, "branch tensors");
    for (EncoderParams* t : {static_cast<EncoderParams*>(&b->params),
                             static_cast<EncoderParams*>(&b->adam.first),
                             static_cast<EncoderParams*>(&b->adam.second)})
      t->for_each_tensor([&](const char* name, double* data, Eigen::Index n) {
        for (Eigen::Index k = 0; k < n; ++k) {
          data[k] = r.f64(name);
          if (!std::isfinite(data[k]))
            throw FormatError(std::string("non-finite value in checkpoint tensor '") + name + "'");
        }
      });
  }
  const auto n = r.u64("threshold_count");
  r.require(n, 28, "threshold_history");
  for (std::uint64_t i = 0; i < n; ++i) {
    ThresholdRecord t;
    t.epoch = r.i64("threshold_history");
    t.branch = r.u32("threshold_history");
    t.tau_s = r.f64("threshold_history");
    t.tau_u = r.f64("threshold_history");
    s.threshold_history.push_back(t);
  }
  r.expect_end();
  return s;
}

}  // namespace arl
