#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "arl/corpus.hpp"
#include "arl/error.hpp"
#include "arl/trainer.hpp"

namespace arl {

// Everything a run needs, read from a flat key=value file. Lines starting
// with '#' and blank lines are ignored; unknown keys are errors.
struct RunConfig {
  CorpusSpec corpus;
  TrainConfig train;

  void set(std::string_view key, std::string_view value);
  std::string resolved() const;
  void validate() const {
    corpus.validate();
    train.validate();
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("invalid value '" + std::string(text) + "' for key '" + std::string(key) + "'");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean '" + std::string(text) + "' for key '" + std::string(key) + "'");
}

inline std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

struct KeyBinding {
  const char* key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ARL_SIZE_KEY(name, member)                                                               \
  KeyBinding {                                                                                   \
    name, [](RunConfig& c, std::string_view v) { c.member = parse_number<std::size_t>(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                              \
  }
#define ARL_U64_KEY(name, member)                                                                  \
  KeyBinding {                                                                                     \
    name, [](RunConfig& c, std::string_view v) { c.member = parse_number<std::uint64_t>(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                                \
  }
#define ARL_REAL_KEY(name, member)                                                            \
  KeyBinding {                                                                                \
    name, [](RunConfig& c, std::string_view v) { c.member = parse_number<double>(name, v); }, \
        [](const RunConfig& c) { return format_double(c.member); }                            \
  }
#define ARL_BOOL_KEY(name, member)                                                   \
  KeyBinding {                                                                       \
    name, [](RunConfig& c, std::string_view v) { c.member = parse_bool(name, v); }, \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); } \
  }
#define ARL_SEED_KEY(name, member)                                                                 \
  KeyBinding {                                                                                     \
    name,                                                                                          \
        [](RunConfig& c, std::string_view v) {                                                     \
          if (v == "auto") c.member.reset();                                                       \
          else c.member = parse_number<std::uint64_t>(name, v);                                    \
        },                                                                                         \
        [](const RunConfig& c) { return c.member ? std::to_string(*c.member) : std::string("auto"); } \
  }

inline const std::vector<KeyBinding>& key_bindings() {
  static const std::vector<KeyBinding> keys{
      ARL_SIZE_KEY("corpus.n_queries", corpus.n_queries),
      ARL_SIZE_KEY("corpus.n_videos", corpus.n_videos),
      ARL_SIZE_KEY("corpus.query_len", corpus.query_len),
      ARL_SIZE_KEY("corpus.video_len", corpus.video_len),
      ARL_SIZE_KEY("corpus.text_dim", corpus.text_dim),
      ARL_SIZE_KEY("corpus.video_dim", corpus.video_dim),
      ARL_U64_KEY("corpus.seed", corpus.seed),
      ARL_SIZE_KEY("corpus.segments_per_video", corpus.segments_per_video),
      ARL_REAL_KEY("corpus.ambiguity_rate", corpus.ambiguity_rate),
      ARL_REAL_KEY("corpus.noise_scale", corpus.noise_scale),
      ARL_SIZE_KEY("corpus.latent_dim", corpus.latent_dim),
      ARL_SIZE_KEY("corpus.plant_fanout", corpus.plant_fanout),
      ARL_BOOL_KEY("corpus.plant_into_captioned", corpus.plant_into_captioned),
      ARL_SIZE_KEY("train.epochs", train.epochs),
      ARL_SIZE_KEY("train.batch_size", train.batch_size),
      ARL_SIZE_KEY("train.warmup_epochs", train.warmup_epochs),
      ARL_SIZE_KEY("train.embed_dim", train.embed_dim),
      ARL_REAL_KEY("train.learning_rate", train.learning_rate),
      ARL_REAL_KEY("train.adam_beta1", train.adam_beta1),
      ARL_REAL_KEY("train.adam_beta2", train.adam_beta2),
      ARL_REAL_KEY("train.adam_eps", train.adam_eps),
      ARL_REAL_KEY("train.weight_decay", train.weight_decay),
      ARL_U64_KEY("train.seed", train.seed),
      ARL_BOOL_KEY("train.cross_model", train.cross_model),
      ARL_BOOL_KEY("train.frame_level", train.frame_level),
      ARL_SEED_KEY("train.theta_seed", train.theta_seed),
      ARL_SEED_KEY("train.phi_seed", train.phi_seed),
      ARL_REAL_KEY("loss.margin", train.loss.margin),
      ARL_REAL_KEY("loss.margin_ambiguous", train.loss.margin_ambiguous),
      ARL_REAL_KEY("loss.lambda_nce", train.loss.lambda_nce),
      ARL_REAL_KEY("loss.temperature", train.loss.temperature),
  };
  return keys;
}

#undef ARL_SIZE_KEY
#undef ARL_U64_KEY
#undef ARL_REAL_KEY
#undef ARL_BOOL_KEY
#undef ARL_SEED_KEY

}  // namespace detail

inline void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& k : detail::key_bindings()) {
    if (key == k.key) {
      k.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

// Every key with its effective value, one per line, in a fixed order.
inline std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& k : detail::key_bindings()) out += std::string(k.key) + "=" + k.get(*this) + "\n";
  return out;
}

// Applies "key=value" (one assignment) on top of `cfg`.
inline void apply_assignment(RunConfig& cfg, std::string_view line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError(where + ": expected key=value, got '" + std::string(line) + "'");
  const auto key = detail::trim(line.substr(0, eq));
  const auto value = detail::trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError(where + ": empty key");
  try {
    cfg.set(key, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline RunConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    apply_assignment(cfg, t, source + ":" + std::to_string(lineno));
  }
  return cfg;
}

inline RunConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(in, path);
}

}  // namespace arl
