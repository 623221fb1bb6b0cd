#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "pursuit/config.hpp"

using namespace pursuit;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, DefaultsFollowTheReferenceScene) {
  const RunConfig c = build_config({});
  EXPECT_EQ(c.grid_rows, 3);
  EXPECT_EQ(c.grid_cols, 3);
  EXPECT_EQ(c.sim.num_pursuers, 4);
  EXPECT_EQ(c.sim.num_evaders, 2);
  EXPECT_EQ(c.sim.capture_radius, 5.0);
  EXPECT_EQ(c.sim.v_max, 20.0);
  EXPECT_EQ(c.sim.ac_max, 0.5);
  EXPECT_EQ(c.sim.de_max, -4.5);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(c.train.gamma, 0.95);
  EXPECT_EQ(c.train.epsilon, 0.05);
  EXPECT_EQ(c.train.replay_capacity, 10000u);
  EXPECT_EQ(c.train.history, 3u);
  EXPECT_EQ(c.train.reward.lambda, 2.0);
  EXPECT_EQ(c.train.reward.capture_reward, 10.0);
  EXPECT_EQ(c.evader.gamma, 0.95);
}

TEST(Config, FileWithCommentsAndBlankLines) {
  const std::string text =
      "# scene\n"
      "grid_rows = 4   # rows\n"
      "\n"
      "  lane_length=150\n"
      "eval_seeds = 7, 8 ,9\n"
      "include_adj = false\n";
  const RunConfig c = build_config({text, {}, {}});
  EXPECT_EQ(c.grid_rows, 4);
  EXPECT_EQ(c.lane_length, 150.0);
  EXPECT_EQ(c.eval_seeds, (std::vector<std::uint64_t>{7, 8, 9}));
  EXPECT_FALSE(c.train.include_adj);
}

TEST(Config, Errors) {
  EXPECT_THROW(build_config({"seed = 1\nseed = 2\n", {}, {}}), ConfigError);
  EXPECT_THROW(build_config({"no_such_key = 1\n", {}, {}}), ConfigError);
  EXPECT_THROW(build_config({"grid_rows 3\n", {}, {}}), ConfigError);
  EXPECT_THROW(build_config({"grid_rows = three\n", {}, {}}), ConfigError);
  EXPECT_THROW(build_config({"gamma = 1.5\n", {}, {}}), ConfigError);
  EXPECT_THROW(build_config({"lane_length = inf\n", {}, {}}), ConfigError);
  EXPECT_THROW(build_config({"eval_seeds = 1,,2\n", {}, {}}), ConfigError);
  EXPECT_THROW(build_config({"include_adj = maybe\n", {}, {}}), ConfigError);
  EXPECT_THROW(build_config({"= 3\n", {}, {}}), ConfigError);
  EXPECT_THROW(build_config({{}, {"batch_size"}, {}}), ConfigError);
  EXPECT_THROW(build_config({{}, {"grid_rows=1"}, {}}), ConfigError);
}

TEST(Config, OverridesBeatTheFile) {
  const RunConfig c = build_config({"episodes = 10\nmi_weight = 0.5\n", {"episodes=20", "gamma = 0.9"}, {}});
  EXPECT_EQ(c.train.episodes, 20);
  EXPECT_EQ(c.train.gamma, 0.9);
  EXPECT_EQ(c.train.mi_weight, 0.5);
}

TEST(Config, EnvironmentSeedIsAFallback) {
  EXPECT_EQ(build_config({{}, {}, "42"}).seed, 42u);
  EXPECT_EQ(build_config({"seed = 5\n", {}, "42"}).seed, 5u);
  EXPECT_EQ(build_config({{}, {"seed=6"}, "42"}).seed, 6u);
  EXPECT_THROW(build_config({{}, {}, "x"}), ConfigError);
}

TEST(Config, SeedReachesEveryComponent) {
  const RunConfig a = build_config({"seed = 11\n", {}, {}});
  EXPECT_EQ(a.sim.rng_seed, 11u);
  EXPECT_EQ(a.train.seed, 11u);
  const RunConfig b = build_config({"seed = 12\n", {}, {}});
  EXPECT_NE(a.evader.seed, b.evader.seed);
}

TEST(Config, CanonicalTextRoundTrip) {
  const RunConfig c = build_config({"lane_length = 123.456\nlearning_rate = 0.0003\neval_seeds = 4,5\n", {}, {}});
  const std::string text = to_text(c);
  const RunConfig back = build_config({text, {}, {}});
  EXPECT_EQ(to_text(back), text);
  EXPECT_EQ(back.lane_length, 123.456);
  EXPECT_EQ(back.train.learning_rate, 0.0003);
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), config_keys().size());
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"default.cfg", "desk.cfg", "smoke.cfg"}) {
    const std::string path = std::string(PURSUIT_SOURCE_DIR) + "/configs/" + name;
    const std::string text = slurp(path);
    ASSERT_FALSE(text.empty()) << path;
    EXPECT_NO_THROW(build_config({text, {}, {}})) << name;
  }
  const RunConfig desk = build_config({slurp(std::string(PURSUIT_SOURCE_DIR) + "/configs/desk.cfg"), {}, {}});
  EXPECT_EQ(desk.sim.num_background, 10);
  EXPECT_EQ(desk.sim.max_steps, 500);
  EXPECT_EQ(desk.train.episodes, 2000);
}

TEST(Config, AssignmentsKeepFileOrder) {
  const auto kv = parse_assignments("b = 1\na = 2 # x\n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0].first, "b");
  EXPECT_EQ(kv[1].second, "2");
}
