#pragma once

// Partial observations for both teams.
//
// Visual field of a vehicle on lane l: all of l, all of the straight-ahead
// lane, and the first half of the left and right successor lanes. Every
// observed lane is split at its midpoint into two cells; the lateral lanes
// only contribute their first cell. Pursuers and evaders share this field.

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "pursuit/error.hpp"
#include "pursuit/nn_core.hpp"
#include "pursuit/road_network.hpp"
#include "pursuit/traffic_sim.hpp"

namespace pursuit {

inline constexpr std::size_t kNumCells = 6;

/// Cell index inside the visual field of a vehicle on `observer_lane`, in the
/// order {l first half, l second half, str first, str second, right first,
/// left first}; empty when the position is outside the field.
inline std::optional<std::size_t> field_cell(const RoadNetwork& net, LaneId observer_lane, LaneId lane,
                                             double offset) {
  const double half = net.lane_length() / 2.0;
  const std::size_t half_index = offset < half ? 0 : 1;
  if (lane == observer_lane) return half_index;
  if (net.successor(observer_lane, TurnAction::Straight) == lane) return 2 + half_index;
  if (offset >= half) return std::nullopt;
  if (net.successor(observer_lane, TurnAction::Right) == lane) return 4;
  if (net.successor(observer_lane, TurnAction::Left) == lane) return 5;
  return std::nullopt;
}

struct EvaderObservation {
  std::array<int, kNumCells> cell_counts{};

  bool operator==(const EvaderObservation&) const = default;
};

inline EvaderObservation evader_observe(const RoadNetwork& net, const SimConfig& cfg, const SimState& state,
                                        int evader_id) {
  const VehicleState& e = state.vehicle(evader_id);
  if (e.role != VehicleRole::Evader) throw ContractError("evader_observe on a non-evader");
  EvaderObservation obs;
  if (!e.active) return obs;
  for (int n = 0; n < cfg.num_pursuers; ++n) {
    const VehicleState& p = state.vehicle(n);
    if (!p.active) continue;
    if (auto cell = field_cell(net, e.lane, p.lane, p.offset)) ++obs.cell_counts[*cell];
  }
  return obs;
}

/// Position record: lane, the lanes reachable by each turn, and the distance
/// from the lane start. Flattened as [Emb_l, Emb_str, Emb_lef, Emb_rig, dis];
/// an absent lane encodes as an all-zero one-hot block.
struct LocRecord {
  std::optional<LaneId> lane;
  std::array<std::optional<LaneId>, kNumActions> next;  // Straight, Left, Right
  double dis = 0.0;

  bool operator==(const LocRecord&) const = default;

  std::vector<double> emb_l(const RoadNetwork& net) const { return net.lane_one_hot(lane); }
  std::vector<double> emb(const RoadNetwork& net, TurnAction a) const {
    return net.lane_one_hot(next[action_index(a)]);
  }
};

inline LocRecord make_loc(const RoadNetwork& net, const VehicleState& v) {
  LocRecord r;
  r.lane = v.lane;
  for (std::size_t a = 0; a < kNumActions; ++a) r.next[a] = net.successor(v.lane, kTurnActions[a]);
  r.dis = v.offset;
  return r;
}

struct VisibleEvader {
  int evader_id = 0;
  LocRecord loc;
};

struct PursuerView {
  LocRecord self;
  std::vector<VisibleEvader> visible;
};

inline PursuerView pursuer_observe(const RoadNetwork& net, const SimConfig& cfg, const SimState& state,
                                   int pursuer_id) {
  const VehicleState& p = state.vehicle(pursuer_id);
  if (p.role != VehicleRole::Pursuer) throw ContractError("pursuer_observe on a non-pursuer");
  PursuerView view;
  view.self = make_loc(net, p);
  if (!p.active) return view;
  for (int m = cfg.num_pursuers; m < cfg.num_pursuers + cfg.num_evaders; ++m) {
    const VehicleState& e = state.vehicle(m);
    if (!e.active) continue;
    if (field_cell(net, p.lane, e.lane, e.offset)) view.visible.push_back({m, make_loc(net, e)});
  }
  return view;
}

/// Joint pursuer observation [Loc_N, Loc of the M evader slots, adj].
/// Evader slots are ordered by evader id and zeroed when nobody sees them.
struct JointPursuerObservation {
  std::vector<LocRecord> pursuer_locs;
  std::vector<LocRecord> evader_locs;
  std::vector<std::uint8_t> evader_mask;
  int visible_total = 0;  // sum over pursuers of visible evaders, before deduplication
  bool include_adj = true;

  bool operator==(const JointPursuerObservation&) const = default;
};

inline std::size_t loc_width(std::size_t num_lanes) { return 4 * num_lanes + 1; }

inline std::size_t observation_width(std::size_t num_lanes, std::size_t num_pursuers, std::size_t num_evaders) {
  return loc_width(num_lanes) * (num_pursuers + num_evaders) + num_lanes * num_lanes;
}

inline std::size_t observation_width(const RoadNetwork& net, const SimConfig& cfg) {
  return observation_width(net.num_lanes(), static_cast<std::size_t>(cfg.num_pursuers),
                           static_cast<std::size_t>(cfg.num_evaders));
}

inline JointPursuerObservation joint_observe(const RoadNetwork& net, const SimConfig& cfg, const SimState& state,
                                             bool include_adj = true) {
  JointPursuerObservation op;
  op.include_adj = include_adj;
  op.evader_locs.assign(static_cast<std::size_t>(cfg.num_evaders), LocRecord{});
  op.evader_mask.assign(static_cast<std::size_t>(cfg.num_evaders), 0);
  for (int n = 0; n < cfg.num_pursuers; ++n) {
    PursuerView view = pursuer_observe(net, cfg, state, n);
    op.pursuer_locs.push_back(view.self);
    op.visible_total += static_cast<int>(view.visible.size());
    for (auto& seen : view.visible) {
      const auto slot = static_cast<std::size_t>(seen.evader_id - cfg.num_pursuers);
      op.evader_locs[slot] = seen.loc;
      op.evader_mask[slot] = 1;
    }
  }
  return op;
}

namespace detail {

inline void append_loc(const LocRecord& loc, std::size_t base, std::size_t num_lanes, double lane_length,
                       SparseInput& out) {
  if (loc.lane) out.push(base + loc.lane->index, 1.0);
  for (std::size_t a = 0; a < kNumActions; ++a) {
    if (loc.next[a]) out.push(base + (a + 1) * num_lanes + loc.next[a]->index, 1.0);
  }
  out.push(base + 4 * num_lanes, loc.dis / lane_length);
}

}  // namespace detail

/// Appends the flattened observation at `base`. When `ego` is a pursuer
/// index, that pursuer's record is moved to the first slot (the others keep
/// id order), which makes the state pursuer-specific. Distances are
/// normalized by the lane length. `emit_adj = false` leaves the topology
/// block out so a caller can supply it as a shared input.
inline void append_features(const RoadNetwork& net, const JointPursuerObservation& op, std::size_t base,
                            SparseInput& out, std::optional<std::size_t> ego = std::nullopt, bool emit_adj = true) {
  const std::size_t L = net.num_lanes();
  const std::size_t w = loc_width(L);
  const double len = net.lane_length();
  std::size_t slot = 0;
  if (ego) {
    detail::append_loc(op.pursuer_locs.at(*ego), base, L, len, out);
    ++slot;
  }
  for (std::size_t n = 0; n < op.pursuer_locs.size(); ++n) {
    if (ego && n == *ego) continue;
    detail::append_loc(op.pursuer_locs[n], base + slot * w, L, len, out);
    ++slot;
  }
  for (std::size_t m = 0; m < op.evader_locs.size(); ++m, ++slot) {
    if (op.evader_mask[m]) detail::append_loc(op.evader_locs[m], base + slot * w, L, len, out);
  }
  if (op.include_adj && emit_adj) {
    const std::size_t adj_base = base + slot * w;
    for (auto k : net.adjacency_nonzeros()) out.push(adj_base + k, 1.0);
  }
}

inline SparseInput observation_features(const RoadNetwork& net, const JointPursuerObservation& op,
                                        std::optional<std::size_t> ego = std::nullopt, bool emit_adj = true) {
  SparseInput s;
  s.dim = observation_width(net.num_lanes(), op.pursuer_locs.size(), op.evader_locs.size());
  append_features(net, op, 0, s, ego, emit_adj);
  return s;
}

/// Feature positions of the topology block in `slots` consecutive
/// observations of the given team sizes.
inline std::vector<std::uint32_t> adjacency_feature_indices(const RoadNetwork& net, std::size_t num_pursuers,
                                                            std::size_t num_evaders, std::size_t slots = 1) {
  const std::size_t w = observation_width(net.num_lanes(), num_pursuers, num_evaders);
  const std::size_t adj_base = loc_width(net.num_lanes()) * (num_pursuers + num_evaders);
  std::vector<std::uint32_t> out;
  for (std::size_t k = 0; k < slots; ++k) {
    for (auto nz : net.adjacency_nonzeros()) out.push_back(static_cast<std::uint32_t>(k * w + adj_base + nz));
  }
  return out;
}

inline std::vector<double> flatten(const RoadNetwork& net, const JointPursuerObservation& op) {
  return observation_features(net, op).to_dense();
}

/// Ring of the last h joint observations, oldest first.
class ObservationPool {
 public:
  explicit ObservationPool(std::size_t h) : h_(h) {
    if (h == 0) throw ConfigError("history length must be >= 1");
  }

  void push(JointPursuerObservation obs) {
    entries_.push_back(std::move(obs));
    if (entries_.size() > h_) entries_.pop_front();
  }

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  std::size_t history() const { return h_; }

  /// Exactly h observations; the oldest entry is repeated while fewer exist.
  std::vector<JointPursuerObservation> window() const {
    if (entries_.empty()) throw ContractError("window of an empty observation pool");
    std::vector<JointPursuerObservation> w;
    for (std::size_t k = entries_.size(); k < h_; ++k) w.push_back(entries_.front());
    w.insert(w.end(), entries_.begin(), entries_.end());
    return w;
  }

 private:
  std::size_t h_;
  std::deque<JointPursuerObservation> entries_;
};

inline void pool_push(ObservationPool& pool, JointPursuerObservation obs) { pool.push(std::move(obs)); }

/// Sparse concatenation of a window of observations.
inline SparseInput window_features(const RoadNetwork& net, const std::vector<JointPursuerObservation>& window,
                                   bool emit_adj = true) {
  if (window.empty()) throw ContractError("empty observation window");
  const std::size_t w =
      observation_width(net.num_lanes(), window.front().pursuer_locs.size(), window.front().evader_locs.size());
  SparseInput s;
  s.dim = w * window.size();
  for (std::size_t k = 0; k < window.size(); ++k) append_features(net, window[k], k * w, s, std::nullopt, emit_adj);
  return s;
}

/// Dense h * width vector of the pool window.
inline std::vector<double> pool_window(const RoadNetwork& net, const ObservationPool& pool) {
  return window_features(net, pool.window()).to_dense();
}

}  // namespace pursuit
