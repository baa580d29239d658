#include <gtest/gtest.h>

#include "arl/config.hpp"

using namespace arl;

TEST(Config, DefaultsResolveEveryKey) {
  const RunConfig c;
  const auto text = c.resolved();
  EXPECT_NE(text.find("loss.margin=0.2\n"), std::string::npos);
  EXPECT_NE(text.find("loss.margin_ambiguous=0.1\n"), std::string::npos);
  EXPECT_NE(text.find("loss.lambda_nce=0.02\n"), std::string::npos);
  EXPECT_NE(text.find("train.warmup_epochs=3\n"), std::string::npos);
  EXPECT_NE(text.find("train.theta_seed=auto\n"), std::string::npos);
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')),
            detail::key_bindings().size());
}

TEST(Config, ParsesCommentsBlanksAndWhitespace) {
  const auto c = parse_config_text(
      "# comment\n"
      "\n"
      "  train.epochs = 7 \r\n"
      "train.cross_model=false\n"
      "loss.margin=0.3\n"
      "train.phi_seed=99\n"
      "corpus.noise_scale=0.05\n");
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_FALSE(c.train.cross_model);
  EXPECT_EQ(c.train.loss.margin, 0.3);
  EXPECT_EQ(c.train.phi_seed, 99u);
  EXPECT_EQ(c.corpus.noise_scale, 0.05);
}

TEST(Config, ResolvedTextRoundTrips) {
  RunConfig c;
  c.set("train.learning_rate", "0.0031");
  c.set("train.theta_seed", "4");
  c.set("corpus.seed", "12");
  const auto back = parse_config_text(c.resolved());
  EXPECT_EQ(back.resolved(), c.resolved());
  EXPECT_EQ(back.train.learning_rate, 0.0031);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config_text("train.nonsense=1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("train.epochs=abc\n"), ConfigError);
  EXPECT_THROW(parse_config_text("train.epochs=3x\n"), ConfigError);
  EXPECT_THROW(parse_config_text("train.epochs=\n"), ConfigError);
  EXPECT_THROW(parse_config_text("train.cross_model=maybe\n"), ConfigError);
  EXPECT_THROW(parse_config_text("no equals sign\n"), ConfigError);
  EXPECT_THROW(parse_config_text("=3\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/arl.cfg"), ConfigError);
  try {
    parse_config_text("\ntrain.bogus=1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(Config, ValidateCatchesInconsistentValues) {
  auto c = parse_config_text("train.epochs=2\ntrain.warmup_epochs=3\n");
  EXPECT_THROW(c.validate(), ConfigError);
  c = parse_config_text("loss.margin_ambiguous=0.5\n");
  EXPECT_THROW(c.validate(), ConfigError);
  c = parse_config_text("corpus.segments_per_video=20\ncorpus.video_len=16\n");
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(RunConfig{}.validate());
}

TEST(Config, LaterAssignmentsWin) {
  RunConfig c = parse_config_text("train.epochs=4\n");
  apply_assignment(c, "train.epochs=9", "--set");
  EXPECT_EQ(c.train.epochs, 9u);
  EXPECT_THROW(apply_assignment(c, "train.epochs", "--set"), ConfigError);
}
