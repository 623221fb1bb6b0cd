#include <gtest/gtest.h>

#include <cmath>

#include "pursuit/evader_policy.hpp"

using namespace pursuit;

namespace {

const JointEvaderKey kA{1, 0, 0, 0, 0, 0};
const JointEvaderKey kB{0, 2, 0, 0, 1, 0};

}  // namespace

TEST(EvaderPolicy, ZeroRewardFixedPoint) {
  QTable t;
  q_update(t, kA, TurnAction::Left, 0.0, kB, 0.5, 0.9);
  EXPECT_EQ(t.value(kA, TurnAction::Left), 0.0);
}

TEST(EvaderPolicy, BellmanUpdateByHand) {
  QTable t;
  t.set(kB, TurnAction::Right, 2.0);
  t.set(kB, TurnAction::Straight, -1.0);
  q_update(t, kA, TurnAction::Straight, 1.0, kB, 0.5, 0.9);
  EXPECT_NEAR(t.value(kA, TurnAction::Straight), 0.5 * (1.0 + 0.9 * 2.0), 1e-12);
  EXPECT_NEAR(t.value(kA, TurnAction::Straight), 1.4, 1e-12);
}

TEST(EvaderPolicy, DegenerateUpdateCopiesReward) {
  QTable t;
  t.set(kA, TurnAction::Left, 7.0);
  t.set(kB, TurnAction::Left, 100.0);
  q_update(t, kA, TurnAction::Left, -3.25, kB, 1.0, 0.0);
  EXPECT_EQ(t.value(kA, TurnAction::Left), -3.25);
}

TEST(EvaderPolicy, UpdateCanLowerAValue) {
  QTable t;
  t.set(kA, TurnAction::Left, 5.0);
  EvaderTrainConfig cfg;
  cfg.alpha = 0.5;
  cfg.gamma = 0.0;
  q_update(t, kA, TurnAction::Left, 1.0, kB, cfg);
  EXPECT_EQ(t.value(kA, TurnAction::Left), 3.0);
}

TEST(EvaderPolicy, TerminalUpdateDoesNotBootstrap) {
  QTable t;
  t.set(kA, TurnAction::Right, 50.0);
  q_update(t, kA, TurnAction::Right, -10.0, std::nullopt, 1.0, 0.95);
  EXPECT_EQ(t.value(kA, TurnAction::Right), -10.0);
}

TEST(EvaderPolicy, UpdateTouchesExactlyOneEntry) {
  Rng rng(3);
  QTable t;
  std::vector<JointEvaderKey> keys;
  for (int k = 0; k < 6; ++k) keys.push_back({k, k % 2, 0, 1, 0, k});
  for (const auto& k : keys)
    for (auto a : kTurnActions) t.set(k, a, uniform_real(rng, -3, 3));
  for (int trial = 0; trial < 50; ++trial) {
    const QTable before = t;
    const auto& key = keys[uniform_index(rng, keys.size())];
    const auto a = kTurnActions[uniform_index(rng, 3)];
    q_update(t, key, a, uniform_real(rng, -5, 5), keys[uniform_index(rng, keys.size())], 0.3, 0.9);
    int changed = 0;
    for (const auto& k : keys)
      for (auto b : kTurnActions) changed += t.value(k, b) != before.value(k, b);
    EXPECT_LE(changed, 1);
    EXPECT_EQ(t.num_keys(), before.num_keys());
    for (const auto& k : keys)
      for (auto b : kTurnActions)
        if (!(k == key && b == a)) {
          EXPECT_EQ(t.value(k, b), before.value(k, b));
        }
  }
}

TEST(EvaderPolicy, TiesGoToStraight) {
  QTable t;
  Rng rng(1);
  EXPECT_EQ(select_action(t, kA, 0.0, rng), TurnAction::Straight);
  for (auto a : kTurnActions) t.set(kA, a, 4.0);
  EXPECT_EQ(select_action(t, kA, 0.0, rng), TurnAction::Straight);
  t.set(kA, TurnAction::Straight, 1.0);
  EXPECT_EQ(select_action(t, kA, 0.0, rng), TurnAction::Left);
}

TEST(EvaderPolicy, GreedyPicksHighestAllowed) {
  QTable t;
  Rng rng(1);
  t.set(kA, TurnAction::Left, 3.0);
  t.set(kA, TurnAction::Right, 1.0);
  EXPECT_EQ(select_action(t, kA, 0.0, rng), TurnAction::Left);
  EXPECT_EQ(select_action(t, kA, 0.0, TurnMask{true, false, true}, rng), TurnAction::Right);
  EXPECT_EQ(select_action(t, kA, 0.0, TurnMask{false, true, false}, rng), TurnAction::Left);
  EXPECT_THROW(select_action(t, kA, 0.0, TurnMask{false, false, false}, rng), ContractError);
}

TEST(EvaderPolicy, FullExplorationIsUniform) {
  QTable t;
  t.set(kA, TurnAction::Right, 10.0);
  Rng rng(99);
  const int n = 10000;
  std::array<int, 3> count{};
  for (int i = 0; i < n; ++i) ++count[action_index(select_action(t, kA, 1.0, rng))];
  const double p = 1.0 / 3.0, sigma = std::sqrt(n * p * (1 - p));
  for (int c : count) EXPECT_LT(std::abs(c - n * p), 3 * sigma);

  // Only the existing turns are drawn.
  std::array<int, 3> masked{};
  for (int i = 0; i < n; ++i) ++masked[action_index(select_action(t, kA, 1.0, TurnMask{true, true, false}, rng))];
  EXPECT_EQ(masked[2], 0);
  const double s2 = std::sqrt(n * 0.25);
  EXPECT_LT(std::abs(masked[0] - n / 2.0), 3 * s2);
}

TEST(EvaderPolicy, GreedyChoiceIsScaleInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    QTable t;
    std::vector<JointEvaderKey> keys;
    for (int k = 0; k < 5; ++k) {
      keys.push_back({trial, k, 0, 0, 0, 1});
      for (auto a : kTurnActions) t.set(keys.back(), a, std::round(uniform_real(rng, -4, 4)));
    }
    const TurnMask mask{uniform01(rng) < 0.8, true, uniform01(rng) < 0.8};
    std::vector<TurnAction> before;
    for (const auto& k : keys) before.push_back(select_action(t, k, 0.0, mask, rng));
    t.scale(uniform_real(rng, 1e-3, 1e3));
    for (std::size_t i = 0; i < keys.size(); ++i) EXPECT_EQ(select_action(t, keys[i], 0.0, mask, rng), before[i]);
  }
}

// 5 states, 3 actions, deterministic transitions with a terminal exit.
// Q-learning with uniform exploration must reach the value-iteration fixed point.
TEST(EvaderPolicy, QLearningConvergesToValueIteration) {
  const int S = 5;
  const int next[S][3] = {{1, 2, 0}, {3, 0, 4}, {2, 4, 1}, {-1, 1, 0}, {0, -1, 3}};
  const double reward[S][3] = {{0, 1, -1}, {2, 0, 0.5}, {-0.5, 1, 0}, {5, 0, -2}, {0, 3, 1}};
  const double gamma = 0.9;

  double qstar[S][3] = {};
  for (int it = 0; it < 2000; ++it) {
    double q2[S][3];
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < 3; ++a) {
        double boot = 0;
        if (next[s][a] >= 0) boot = gamma * std::max({qstar[next[s][a]][0], qstar[next[s][a]][1], qstar[next[s][a]][2]});
        q2[s][a] = reward[s][a] + boot;
      }
    std::copy(&q2[0][0], &q2[0][0] + S * 3, &qstar[0][0]);
  }

  auto key = [](int s) { return JointEvaderKey{s, 0, 0, 0, 0, 0}; };
  QTable t;
  Rng rng(17);
  for (int u = 0; u < 100000; ++u) {
    const int s = static_cast<int>(uniform_index(rng, S));
    const int a = static_cast<int>(uniform_index(rng, 3));
    const int n = next[s][a];
    q_update(t, key(s), kTurnActions[a], reward[s][a], n >= 0 ? std::optional(key(n)) : std::nullopt, 0.5, gamma);
  }
  double err = 0;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < 3; ++a) err = std::max(err, std::abs(t.value(key(s), kTurnActions[a]) - qstar[s][a]));
  EXPECT_LT(err, 1e-3);
}

TEST(EvaderPolicy, ZeroEpisodesGiveEmptyTables) {
  const auto net = build_grid(2, 2, 100);
  SimConfig sc;
  sc.num_pursuers = 1;
  sc.num_evaders = 2;
  sc.num_background = 0;
  EvaderTrainConfig cfg;
  cfg.episodes = 0;
  const auto tables = pretrain(net, sc, cfg);
  ASSERT_EQ(tables.size(), 2u);
  for (const auto& t : tables) EXPECT_TRUE(t.empty());
}

TEST(EvaderPolicy, PretrainIsDeterministic) {
  const auto net = build_grid(2, 2, 100);
  SimConfig sc;
  sc.num_pursuers = 2;
  sc.num_evaders = 2;
  sc.num_background = 4;
  sc.max_steps = 150;
  EvaderTrainConfig cfg;
  cfg.episodes = 15;
  std::vector<EvaderEpisodeStats> s1, s2;
  const auto a = pretrain(net, sc, cfg, &s1);
  const auto b = pretrain(net, sc, cfg, &s2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(save_qtables(a), save_qtables(b));
  EXPECT_EQ(s1.size(), 15u);
  EXPECT_FALSE(a[0].empty());
  cfg.seed = 2;
  EXPECT_NE(save_qtables(pretrain(net, sc, cfg)), save_qtables(a));
}

TEST(EvaderPolicy, RejectsBadTrainConfig) {
  EvaderTrainConfig cfg;
  cfg.alpha = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.gamma = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.epsilon = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(EvaderPolicy, TrainedEvaderOutlastsRandomEvader) {
  const auto net = build_grid(2, 2, 100);
  SimConfig sc;
  sc.num_pursuers = 1;
  sc.num_evaders = 1;
  sc.num_background = 0;
  sc.max_steps = 300;
  EvaderTrainConfig cfg;
  cfg.episodes = 1500;
  const auto tables = pretrain(net, sc, cfg);
  double trained = 0, random = 0;
  for (std::uint64_t ep = 0; ep < 50; ++ep) {
    trained += evasion_duration(net, sc, tables, 70000 + ep);
    random += evasion_duration(net, sc, {}, 70000 + ep);
  }
  RecordProperty("trained_mean", std::to_string(trained / 50));
  RecordProperty("random_mean", std::to_string(random / 50));
  std::printf("mean evasion: trained %.1f, random %.1f\n", trained / 50, random / 50);
  EXPECT_GT(trained, random);
}

TEST(EvaderPolicy, QTableTextRoundTrip) {
  QTable t;
  t.set(kA, TurnAction::Left, 0.1);
  t.set(kA, TurnAction::Right, -1.0 / 3.0);
  t.set(kB, TurnAction::Straight, 1e-300);
  const auto text = save_qtable(t);
  EXPECT_TRUE(load_qtable(text) == t);
  EXPECT_EQ(save_qtable(load_qtable(text)), text);
  EXPECT_NE(text.find("1,0,0,0,0,0|1|0.10000000000000001"), std::string::npos);
}

TEST(EvaderPolicy, EmptyTableIsEmptyText) {
  EXPECT_EQ(save_qtable(QTable{}), "");
  EXPECT_TRUE(load_qtable("").empty());
  EXPECT_TRUE(load_qtables("").empty());
}

TEST(EvaderPolicy, MalformedQTableLines) {
  EXPECT_THROW(load_qtable("1,0,0,0,0,0|1|2\n1,0,0,0,0,0|1|3\n"), FormatError);
  EXPECT_THROW(load_qtable("1,0,0|7|2\n"), FormatError);
  EXPECT_THROW(load_qtable("1,0,0|1\n"), FormatError);
  EXPECT_THROW(load_qtable("1,x,0|1|2\n"), FormatError);
  EXPECT_THROW(load_qtable("1,0,0|1|nan\n"), FormatError);
  EXPECT_THROW(load_qtables("1,0|0|1\n"), FormatError);
  EXPECT_THROW(load_qtables("[evader 1]\n"), FormatError);
}

TEST(EvaderPolicy, TableSetRoundTrip) {
  QTableSet set(2);
  set[0].set(kA, TurnAction::Left, 2.5);
  set[1].set(kB, TurnAction::Right, -0.75);
  const auto text = save_qtables(set);
  const auto back = load_qtables(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(back[0] == set[0]);
  EXPECT_TRUE(back[1] == set[1]);
}

TEST(EvaderPolicy, JointKeyLayout) {
  const auto net = build_grid(3, 3, 200);
  SimConfig sc;
  sc.num_background = 0;
  SimState s = reset(net, sc);
  const auto key = joint_evader_key(net, sc, s);
  ASSERT_EQ(key.size(), 12u);
  for (int m = 0; m < 2; ++m) {
    const auto obs = evader_observe(net, sc, s, sc.num_pursuers + m);
    for (int c = 0; c < 6; ++c) EXPECT_EQ(key[static_cast<std::size_t>(6 * m + c)], obs.cell_counts[static_cast<std::size_t>(c)]);
  }
  s.vehicles[static_cast<std::size_t>(sc.num_pursuers)].active = false;
  const auto k2 = joint_evader_key(net, sc, s);
  for (int c = 0; c < 6; ++c) EXPECT_EQ(k2[static_cast<std::size_t>(c)], 0);
}
