#include <gtest/gtest.h>

#include <array>

#include "pursuit/evader_policy.hpp"
#include "pursuit/observation.hpp"

using namespace pursuit;

namespace {

LaneId interior_northbound(const RoadNetwork& net) {
  for (std::uint32_t i = 0; i < net.num_lanes(); ++i) {
    const auto& l = net.lane(LaneId{i});
    if (!l.end_intersection || l.heading != Heading::North) continue;
    const auto m = net.available_turns(LaneId{i});
    if (m[0] && m[1] && m[2] && net.lane(*net.successor(LaneId{i}, TurnAction::Straight)).end_intersection) {
      return LaneId{i};
    }
  }
  throw std::runtime_error("no interior lane");
}

// A lane with no point within two lane lengths of `lane`'s start.
LaneId far_lane(const RoadNetwork& net, LaneId lane) {
  const Point p = net.lane(lane).start;
  for (std::uint32_t i = 0; i < net.num_lanes(); ++i) {
    const auto& l = net.lane(LaneId{i});
    if (euclidean(l.start, p) > 2.5 * net.lane_length() && euclidean(l.end, p) > 2.5 * net.lane_length()) {
      return LaneId{i};
    }
  }
  throw std::runtime_error("no far lane");
}

struct Scene {
  RoadNetwork net = build_grid(3, 3, 200);
  SimConfig cfg;
  SimState state;

  Scene(int n, int m) {
    cfg.num_pursuers = n;
    cfg.num_evaders = m;
    cfg.num_background = 0;
    state = reset(net, cfg);
    // Pursuers parked far from the interior lane, evaders on it.
    const LaneId base = interior_northbound(net);
    const LaneId park = far_lane(net, base);
    for (auto& v : state.vehicles) {
      v.lane = v.role == VehicleRole::Pursuer ? park : base;
      v.offset = 5.0 + 10.0 * v.id;
    }
  }

  void put(int id, LaneId lane, double offset) {
    state.vehicles[static_cast<std::size_t>(id)].lane = lane;
    state.vehicles[static_cast<std::size_t>(id)].offset = offset;
  }
};

}  // namespace

TEST(Observation, EmptyEvaderField) {
  Scene sc(2, 1);
  const LaneId lane = interior_northbound(sc.net);
  sc.put(2, lane, 50);
  sc.put(0, far_lane(sc.net, lane), 10);
  sc.put(1, far_lane(sc.net, lane), 30);
  EXPECT_EQ(evader_observe(sc.net, sc.cfg, sc.state, 2).cell_counts, (std::array<int, 6>{0, 0, 0, 0, 0, 0}));
}

TEST(Observation, PursuerAheadOnOwnLaneFirstHalf) {
  Scene sc(1, 1);
  const LaneId lane = interior_northbound(sc.net);
  sc.put(1, lane, 50);
  sc.put(0, lane, 60);
  EXPECT_EQ(evader_observe(sc.net, sc.cfg, sc.state, 1).cell_counts, (std::array<int, 6>{1, 0, 0, 0, 0, 0}));
  sc.put(0, lane, 150);
  EXPECT_EQ(evader_observe(sc.net, sc.cfg, sc.state, 1).cell_counts, (std::array<int, 6>{0, 1, 0, 0, 0, 0}));
}

TEST(Observation, CellsOfTheSuccessorLanes) {
  Scene sc(2, 1);
  const LaneId lane = interior_northbound(sc.net);
  const LaneId str = *sc.net.successor(lane, TurnAction::Straight);
  const LaneId rig = *sc.net.successor(lane, TurnAction::Right);
  const LaneId lef = *sc.net.successor(lane, TurnAction::Left);
  sc.put(2, lane, 20);
  sc.put(0, str, 10);
  sc.put(1, str, 60);
  EXPECT_EQ(evader_observe(sc.net, sc.cfg, sc.state, 2).cell_counts, (std::array<int, 6>{0, 0, 2, 0, 0, 0}));
  sc.put(1, str, 150);
  EXPECT_EQ(evader_observe(sc.net, sc.cfg, sc.state, 2).cell_counts, (std::array<int, 6>{0, 0, 1, 1, 0, 0}));
  sc.put(0, rig, 99);
  sc.put(1, lef, 1);
  EXPECT_EQ(evader_observe(sc.net, sc.cfg, sc.state, 2).cell_counts, (std::array<int, 6>{0, 0, 0, 0, 1, 1}));
  // The far half of a lateral lane is outside the field.
  sc.put(0, rig, 100);
  sc.put(1, lef, 199);
  EXPECT_EQ(evader_observe(sc.net, sc.cfg, sc.state, 2).cell_counts, (std::array<int, 6>{0, 0, 0, 0, 0, 0}));
}

TEST(Observation, PursuerVisibility) {
  Scene sc(1, 1);
  const LaneId lane = interior_northbound(sc.net);
  sc.put(0, lane, 20);
  sc.put(1, lane, 120);
  auto view = pursuer_observe(sc.net, sc.cfg, sc.state, 0);
  ASSERT_EQ(view.visible.size(), 1u);
  EXPECT_EQ(view.visible[0].evader_id, 1);
  EXPECT_EQ(view.visible[0].loc.lane, lane);
  EXPECT_EQ(view.visible[0].loc.dis, 120.0);

  sc.put(1, far_lane(sc.net, lane), 50);
  EXPECT_TRUE(pursuer_observe(sc.net, sc.cfg, sc.state, 0).visible.empty());

  sc.put(1, lane, 120);
  sc.state.vehicles[1].active = false;
  EXPECT_TRUE(pursuer_observe(sc.net, sc.cfg, sc.state, 0).visible.empty());
}

TEST(Observation, LocRecordContents) {
  Scene sc(1, 1);
  const LaneId lane = interior_northbound(sc.net);
  sc.put(0, lane, 37.5);
  const LocRecord r = make_loc(sc.net, sc.state.vehicles[0]);
  EXPECT_EQ(r.lane, lane);
  EXPECT_EQ(r.next[0], sc.net.successor(lane, TurnAction::Straight));
  EXPECT_EQ(r.next[1], sc.net.successor(lane, TurnAction::Left));
  EXPECT_EQ(r.next[2], sc.net.successor(lane, TurnAction::Right));
  EXPECT_EQ(r.dis, 37.5);
  EXPECT_EQ(r.emb_l(sc.net), sc.net.lane_one_hot(lane));
}

TEST(Observation, JointObservationSlotsAndDeduplication) {
  Scene sc(2, 2);
  const LaneId lane = interior_northbound(sc.net);
  auto op = joint_observe(sc.net, sc.cfg, sc.state);
  EXPECT_EQ(op.evader_mask, (std::vector<std::uint8_t>{0, 0}));
  EXPECT_EQ(op.visible_total, 0);
  for (const auto& l : op.evader_locs) EXPECT_EQ(l, LocRecord{});

  sc.put(0, lane, 10);
  sc.put(1, lane, 40);
  sc.put(2, far_lane(sc.net, lane), 100);
  sc.put(3, lane, 120);  // second evader, seen by both pursuers
  op = joint_observe(sc.net, sc.cfg, sc.state);
  EXPECT_EQ(op.evader_mask, (std::vector<std::uint8_t>{0, 1}));
  EXPECT_EQ(op.visible_total, 2);
  EXPECT_EQ(op.evader_locs[1].lane, lane);
  EXPECT_EQ(op.evader_locs[0], LocRecord{});
}

TEST(Observation, WidthForTheDefaultScene) {
  const RoadNetwork net = build_grid(3, 3, 200);
  EXPECT_EQ(observation_width(48, 4, 2), 3462u);
  SimConfig cfg;
  EXPECT_EQ(observation_width(net, cfg), 3462u);
  const SimState s = reset(net, cfg);
  EXPECT_EQ(flatten(net, joint_observe(net, cfg, s)).size(), 3462u);
}

TEST(Observation, FlattenLayout) {
  Scene sc(2, 1);
  const RoadNetwork& net = sc.net;
  const std::size_t L = net.num_lanes(), w = loc_width(L);
  const LaneId lane = interior_northbound(net);
  sc.put(0, lane, 50);
  sc.put(2, lane, 100);
  const auto op = joint_observe(net, sc.cfg, sc.state);
  const auto x = flatten(net, op);
  ASSERT_EQ(x.size(), w * 3 + L * L);
  EXPECT_EQ(x[lane.index], 1.0);
  EXPECT_EQ(x[L + net.successor(lane, TurnAction::Straight)->index], 1.0);
  EXPECT_EQ(x[2 * L + net.successor(lane, TurnAction::Left)->index], 1.0);
  EXPECT_EQ(x[3 * L + net.successor(lane, TurnAction::Right)->index], 1.0);
  EXPECT_DOUBLE_EQ(x[4 * L], 0.25);
  EXPECT_DOUBLE_EQ(x[2 * w + 4 * L], 0.5);  // evader slot, normalized distance
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) {
      EXPECT_EQ(x[3 * w + i * L + j], net.adjacent(LaneId{static_cast<std::uint32_t>(i)},
                                                   LaneId{static_cast<std::uint32_t>(j)})
                                          ? 1.0
                                          : 0.0);
    }
}

TEST(Observation, EgoRecordMovesToTheFront) {
  Scene sc(3, 1);
  const LaneId lane = interior_northbound(sc.net);
  sc.put(2, lane, 70);
  const auto op = joint_observe(sc.net, sc.cfg, sc.state);
  const auto plain = observation_features(sc.net, op).to_dense();
  const auto ego = observation_features(sc.net, op, 2).to_dense();
  const std::size_t w = loc_width(sc.net.num_lanes());
  ASSERT_EQ(plain.size(), ego.size());
  auto block = [&](const std::vector<double>& v, std::size_t k) {
    return std::vector<double>(v.begin() + static_cast<long>(k * w), v.begin() + static_cast<long>((k + 1) * w));
  };
  EXPECT_EQ(block(ego, 0), block(plain, 2));
  EXPECT_EQ(block(ego, 1), block(plain, 0));
  EXPECT_EQ(block(ego, 2), block(plain, 1));
  EXPECT_EQ(std::vector<double>(ego.begin() + static_cast<long>(3 * w), ego.end()),
            std::vector<double>(plain.begin() + static_cast<long>(3 * w), plain.end()));
}

TEST(Observation, DroppingTopologyZeroesTheBlockOnly) {
  const RoadNetwork net = build_grid(3, 3, 200);
  SimConfig cfg;
  const SimState s = reset(net, cfg);
  const auto with = flatten(net, joint_observe(net, cfg, s, true));
  const auto without = flatten(net, joint_observe(net, cfg, s, false));
  ASSERT_EQ(with.size(), without.size());
  const std::size_t adj_base = loc_width(48) * 6;
  for (std::size_t i = 0; i < with.size(); ++i) {
    if (i < adj_base) {
      EXPECT_EQ(with[i], without[i]);
    } else {
      EXPECT_EQ(without[i], 0.0);
    }
  }
}

TEST(Observation, AdjacencyIndicesPointAtTheTopologyBlock) {
  const RoadNetwork net = build_grid(2, 2, 100);
  SimConfig cfg;
  cfg.num_background = 2;
  const SimState s = reset(net, cfg);
  const auto op = joint_observe(net, cfg, s);
  ObservationPool pool(3);
  pool.push(op);
  pool.push(op);
  const auto window = window_features(net, pool.window());
  const auto without = window_features(net, pool.window(), false).to_dense();
  auto dense = window.to_dense();
  for (auto i : adjacency_feature_indices(net, 4, 2, 3)) {
    EXPECT_EQ(dense[i], 1.0);
    EXPECT_EQ(without[i], 0.0);
    dense[i] = 0.0;
  }
  EXPECT_EQ(dense, without);
}

TEST(Observation, PoolWindowPaddingAndEviction) {
  const RoadNetwork net = build_grid(2, 2, 100);
  SimConfig cfg;
  cfg.num_background = 0;
  SimState s = reset(net, cfg);
  std::vector<JointPursuerObservation> obs;
  for (int k = 0; k < 4; ++k) {
    s.vehicles[0].offset = 10.0 * (k + 1);
    obs.push_back(joint_observe(net, cfg, s));
  }
  ObservationPool pool(3);
  EXPECT_THROW(pool.window(), ContractError);
  pool_push(pool, obs[0]);
  EXPECT_EQ(pool.window(), (std::vector<JointPursuerObservation>{obs[0], obs[0], obs[0]}));
  pool_push(pool, obs[1]);
  pool_push(pool, obs[2]);
  EXPECT_EQ(pool.window(), (std::vector<JointPursuerObservation>{obs[0], obs[1], obs[2]}));
  pool_push(pool, obs[3]);
  EXPECT_EQ(pool.window(), (std::vector<JointPursuerObservation>{obs[1], obs[2], obs[3]}));
  EXPECT_EQ(pool.size(), 3u);
  EXPECT_EQ(pool_window(net, pool).size(), 3 * observation_width(net, cfg));
  EXPECT_THROW(ObservationPool(0), ConfigError);
}

TEST(Observation, PropertiesOverRandomRuns) {
  const RoadNetwork net = build_grid(3, 3, 200);
  SimConfig cfg;
  cfg.num_background = 10;
  const std::size_t L = net.num_lanes(), w = loc_width(L), width = observation_width(net, cfg);
  Rng rng(17);
  ObservationPool pool(3);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.rng_seed = seed;
    SimState s = reset(net, cfg);
    pool.clear();
    for (int t = 0; t < 200; ++t) {
      const auto op = joint_observe(net, cfg, s);
      pool.push(op);
      const auto x = flatten(net, op);
      ASSERT_EQ(x.size(), width);
      ASSERT_EQ(pool_window(net, pool).size(), 3 * width);
      for (std::size_t slot = 0; slot < 6; ++slot) {
        for (std::size_t part = 0; part < 4; ++part) {
          int ones = 0;
          for (std::size_t i = 0; i < L; ++i) {
            const double v = x[slot * w + part * L + i];
            ASSERT_TRUE(v == 0.0 || v == 1.0);
            ones += v == 1.0;
          }
          ASSERT_LE(ones, 1);
        }
        const double dis = x[slot * w + 4 * L];
        ASSERT_GE(dis, 0.0);
        ASSERT_LE(dis, 1.0);
      }
      int total = 0;
      for (int m = cfg.num_pursuers; m < cfg.num_pursuers + cfg.num_evaders; ++m) {
        const auto c = evader_observe(net, cfg, s, m).cell_counts;
        int sum = 0;
        for (int v : c) {
          ASSERT_GE(v, 0);
          sum += v;
        }
        ASSERT_LE(sum, cfg.num_pursuers);
        total += sum;
      }
      ASSERT_LE(total, cfg.num_pursuers * 6);
      Decisions d;
      for (const auto& v : s.vehicles)
        if (needs_decision(net, cfg, s, v.id)) d[v.id] = random_allowed(net.available_turns(v.lane), rng);
      if (step(net, cfg, s, d).done) break;
    }
  }
}
