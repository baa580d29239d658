// Command-line front end: gen-corpus, train, evaluate, audit, grad-check.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "arl/arl.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitOther = 1;

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += (c == '\n') ? ' ' : c;
  }
  return out + "\"";
}

int report_error(const char* kind, const std::string& message, int code) {
  std::cerr << "error kind=" << kind << " message=" << quote(message) << "\n";
  return code;
}

void require_readable(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw arl::ConfigError(std::string(what) + " '" + path + "' is not readable");
}

void require_writable_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent))
    throw arl::ConfigError("output directory '" + parent.string() + "' does not exist");
}

arl::RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  arl::RunConfig cfg = path.empty() ? arl::RunConfig{} : arl::load_config(path);
  for (const auto& o : overrides) arl::apply_assignment(cfg, o, "--set");
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ambiguity-restrained training and evaluation for partially relevant video retrieval"};
  app.require_subcommand(1);

  std::string spec_path, out_path, split_name = "train";
  std::vector<std::string> overrides;
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic planted-ambiguity corpus");
  gen->add_option("--spec", spec_path, "key=value config holding corpus.* keys")->required();
  gen->add_option("--out", out_path, "output .prvc path")->required();
  gen->add_option("--split", split_name, "train or test")->check(CLI::IsMember({"train", "test"}));
  gen->add_option("--set", overrides, "override key=value (repeatable)");

  std::string corpus_path, config_path, out_dir, resume_path;
  auto* train = app.add_subcommand("train", "Train both branches");
  train->add_option("--corpus", corpus_path, "train-split .prvc")->required();
  train->add_option("--config", config_path, "key=value config")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--resume", resume_path, "continue from a checkpoint");
  train->add_option("--set", overrides, "override key=value (repeatable)");

  std::string checkpoint_path;
  auto* evaluate = app.add_subcommand("evaluate", "Recall@K of the fused two-branch score");
  evaluate->add_option("--checkpoint", checkpoint_path)->required();
  evaluate->add_option("--corpus", corpus_path)->required();
  evaluate->add_option("--out", out_path, "report.json")->required();

  std::uint32_t branch = 0;
  auto* audit = app.add_subcommand("audit", "Similarity/uncertainty distributions and LAD quality");
  audit->add_option("--checkpoint", checkpoint_path)->required();
  audit->add_option("--corpus", corpus_path, "train-split .prvc")->required();
  audit->add_option("--out", out_path, "audit.csv")->required();
  audit->add_option("--branch", branch, "0 = theta, 1 = phi")->check(CLI::Range(0, 1));

  std::uint64_t seed = 1;
  std::size_t instances = 20;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the full objective");
  grad->add_option("--seed", seed);
  grad->add_option("--instances", instances);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    return report_error("usage", e.what(), kExitUsage);
  }

  try {
    if (*gen) {
      const auto cfg = resolve_config(spec_path, overrides);
      require_writable_parent(out_path);
      std::cout << cfg.resolved();
      const auto split = split_name == "test" ? arl::Split::test : arl::Split::train;
      const auto corpus = arl::generate_synthetic(cfg.corpus, split);
      arl::write_corpus(corpus, out_path);
      std::cout << "wrote " << out_path << " (" << corpus.n_queries << " queries, " << corpus.n_videos
                << " videos, " << corpus.planted_ambiguity->size() << " planted pairs)\n";
    } else if (*train) {
      require_readable(corpus_path, "corpus");
      if (!resume_path.empty()) require_readable(resume_path, "checkpoint");
      const auto cfg = resolve_config(config_path, overrides);
      fs::create_directories(out_dir);
      std::cout << cfg.resolved();
      {
        std::ofstream f(fs::path(out_dir) / "config.resolved");
        f << cfg.resolved();
      }
      const auto corpus = arl::read_corpus(corpus_path);
      arl::TrainLog log;
      arl::DualBranchState state =
          resume_path.empty() ? arl::init_state(corpus, cfg.train) : arl::resume(resume_path);
      arl::continue_training(state, corpus, cfg.train, &log);
      arl::checkpoint(state, (fs::path(out_dir) / "checkpoint.arlk").string());
      log.write_csv((fs::path(out_dir) / "train_log.csv").string());
      std::cout << "trained to epoch " << state.epoch << "; wrote " << out_dir << "\n";
    } else if (*evaluate) {
      require_readable(checkpoint_path, "checkpoint");
      require_readable(corpus_path, "corpus");
      require_writable_parent(out_path);
      const auto state = arl::resume(checkpoint_path);
      const auto corpus = arl::read_corpus(corpus_path);
      const auto report = arl::evaluate(state, corpus);
      arl::write_report_json(report, out_path);
      std::cout << report.to_json().dump() << "\n";
    } else if (*audit) {
      require_readable(checkpoint_path, "checkpoint");
      require_readable(corpus_path, "corpus");
      require_writable_parent(out_path);
      const auto state = arl::resume(checkpoint_path);
      const auto corpus = arl::read_corpus(corpus_path);
      const auto a = arl::audit(state, corpus, branch);
      std::ofstream f(out_path, std::ios::trunc);
      if (!f) throw arl::FormatError("cannot open '" + out_path + "' for writing");
      f << arl::audit_csv(a, &corpus);
      std::printf("tau_s=%.6f tau_u=%.6f detected=%zu planted=%zu precision=%.4f recall=%.4f f1=%.4f\n",
                  a.thresholds.tau_s, a.thresholds.tau_u, a.quality.detected, a.quality.planted,
                  a.quality.precision, a.quality.recall, a.quality.f1);
    } else if (*grad) {
      const auto r = arl::run_grad_check(seed, instances);
      std::printf("max_rel_error=%.3e instances=%zu entries=%zu worst=%s\n", r.max_rel_error,
                  r.instances, r.entries, r.worst_tensor.c_str());
      if (!(r.max_rel_error < 1e-4))
        return report_error("numerical", "gradient check exceeded 1e-4", kExitNumerical);
    }
  } catch (const arl::ConfigError& e) {
    return report_error(e.kind(), e.what(), kExitConfig);
  } catch (const arl::NumericalError& e) {
    return report_error(e.kind(), e.what(), kExitNumerical);
  } catch (const arl::DegenerateInputError& e) {
    return report_error(e.kind(), e.what(), kExitNumerical);
  } catch (const arl::Error& e) {
    return report_error(e.kind(), e.what(), kExitOther);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kExitOther);
  }
  return 0;
}
