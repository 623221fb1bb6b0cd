#pragma once

// Discrete-time traffic world: bounded-acceleration kinematics, fixed-cycle
// traffic lights, background flow on cyclic routes, and capture detection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pursuit/error.hpp"
#include "pursuit/rng.hpp"
#include "pursuit/road_network.hpp"

namespace pursuit {

enum class VehicleRole : std::uint8_t { Pursuer, Evader, Background };

inline const char* to_string(VehicleRole r) {
  switch (r) {
    case VehicleRole::Pursuer: return "pursuer";
    case VehicleRole::Evader: return "evader";
    case VehicleRole::Background: return "background";
  }
  return "?";
}

struct VehicleState {
  int id = 0;
  VehicleRole role = VehicleRole::Background;
  LaneId lane;
  double offset = 0.0;  // meters from the start of the lane
  double speed = 0.0;
  std::optional<TurnAction> pending_turn;
  bool active = true;

  bool operator==(const VehicleState&) const = default;
};

struct SimConfig {
  int num_pursuers = 4;
  int num_evaders = 2;
  int num_background = 50;
  double capture_radius = 5.0;
  double v_max = 20.0;
  double ac_max = 0.5;
  double de_max = -4.5;
  int max_steps = 500;
  double dt = 1.0;
  double light_green = 30.0;  // north-south green (= east-west red)
  double light_red = 30.0;    // north-south red (= east-west green)
  double amber = 4.0;         // tail of each green window during which stoppable vehicles stop
  double headway = 10.0;
  double decision_zone = 10.0;
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (num_pursuers < 1) throw ConfigError("num_pursuers must be >= 1");
    if (num_evaders < 1) throw ConfigError("num_evaders must be >= 1");
    if (num_background < 0) throw ConfigError("num_background must be >= 0");
    if (!(capture_radius > 0.0)) throw ConfigError("capture_radius must be > 0");
    if (!(v_max > 0.0)) throw ConfigError("v_max must be > 0");
    if (!(ac_max > 0.0)) throw ConfigError("ac_max must be > 0");
    if (!(de_max < 0.0)) throw ConfigError("de_max must be < 0");
    if (max_steps <= 0) throw ConfigError("max_steps must be > 0");
    if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
    if (!(light_green > 0.0) || !(light_red > 0.0)) throw ConfigError("light durations must be > 0");
    if (amber < 0.0 || amber >= std::min(light_green, light_red)) throw ConfigError("amber must fit inside green");
    if (headway < 0.0) throw ConfigError("headway must be >= 0");
    if (decision_zone < 0.0) throw ConfigError("decision_zone must be >= 0");
  }

  int num_vehicles() const { return num_pursuers + num_evaders + num_background; }
};

enum class LightPhase : std::uint8_t { NorthSouthGreen, EastWestGreen };
enum class Signal : std::uint8_t { Green, Amber, Red };

struct CaptureEvent {
  int evader_id = 0;
  int pursuer_id = 0;  // lowest-id pursuer within the radius
  std::uint64_t step = 0;

  bool operator==(const CaptureEvent&) const = default;
};

/// Instrumentation: one record per lane transition during a step.
struct LaneCrossing {
  int vehicle_id = 0;
  LaneId from;
  LaneId to;
  Signal signal = Signal::Green;  // signal of the approach when crossing; Green at dead ends
};

struct BackgroundRoute {
  std::vector<TurnAction> cycle;
  std::size_t cursor = 0;

  bool operator==(const BackgroundRoute&) const = default;
};

struct SimState {
  std::uint64_t clock = 0;
  std::vector<VehicleState> vehicles;  // indexed by id: pursuers, evaders, background
  std::vector<LightPhase> light_phase;
  std::vector<std::pair<int, std::uint64_t>> captures;  // (evader id, step captured)
  std::vector<BackgroundRoute> routes;                  // indexed by id - N - M
  Rng rng;

  bool operator==(const SimState&) const = default;

  const VehicleState& vehicle(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vehicles.size()) throw ContractError("unknown vehicle id");
    return vehicles[static_cast<std::size_t>(id)];
  }
};

using Decisions = std::map<int, TurnAction>;

struct StepResult {
  std::vector<CaptureEvent> captures;
  bool done = false;
  std::vector<LaneCrossing> crossings;
};

/// Phase of every intersection at a given clock (synchronized fixed cycle).
inline LightPhase phase_at(const SimConfig& cfg, std::uint64_t clock) {
  const double cycle = cfg.light_green + cfg.light_red;
  const double t = std::fmod(static_cast<double>(clock) * cfg.dt, cycle);
  return t < cfg.light_green ? LightPhase::NorthSouthGreen : LightPhase::EastWestGreen;
}

/// Signal seen by a vehicle approaching along `heading` at `clock`.
inline Signal signal_for(const SimConfig& cfg, std::uint64_t clock, Heading heading) {
  const double cycle = cfg.light_green + cfg.light_red;
  const double t = std::fmod(static_cast<double>(clock) * cfg.dt, cycle);
  const bool ns_window = t < cfg.light_green;
  if (ns_window != is_north_south(heading)) return Signal::Red;
  const double window_end = ns_window ? cfg.light_green : cycle;
  return window_end - t <= cfg.amber ? Signal::Amber : Signal::Green;
}

/// Largest speed v' >= 0 such that moving v' * dt and then braking at
/// |de_max| stops within `gap`.
inline double safe_speed(double gap, double brake, double dt) {
  if (gap <= 0.0) return 0.0;
  return -brake * dt + std::sqrt(brake * brake * dt * dt + 2.0 * brake * gap);
}

inline double distance(const RoadNetwork& net, const SimState& state, int id_a, int id_b) {
  const VehicleState& a = state.vehicle(id_a);
  const VehicleState& b = state.vehicle(id_b);
  return euclidean(net.position(a.lane, a.offset), net.position(b.lane, b.offset));
}

inline bool makes_decisions(VehicleRole r) { return r != VehicleRole::Background; }

/// True iff the vehicle is active, decides for itself, has nothing latched,
/// and is inside the decision zone. The zone is widened to at least
/// v_max * dt so a vehicle can never skip it within one step.
inline bool needs_decision(const RoadNetwork& net, const SimConfig& cfg, const SimState& state, int vehicle_id) {
  const VehicleState& v = state.vehicle(vehicle_id);
  if (!v.active || !makes_decisions(v.role) || v.pending_turn) return false;
  const double zone = std::max(cfg.decision_zone, cfg.v_max * cfg.dt);
  return v.offset >= net.lane_length() - zone;
}

inline std::vector<int> vehicles_needing_decision(const RoadNetwork& net, const SimConfig& cfg,
                                                  const SimState& state, VehicleRole role) {
  std::vector<int> ids;
  for (const auto& v : state.vehicles) {
    if (v.role == role && needs_decision(net, cfg, state, v.id)) ids.push_back(v.id);
  }
  return ids;
}

inline SimState reset(const RoadNetwork& net, const SimConfig& cfg) {
  cfg.validate();
  SimState s;
  s.rng.seed(cfg.rng_seed);
  const int total = cfg.num_vehicles();
  const double len = net.lane_length();
  const double zone = std::max(cfg.decision_zone, cfg.v_max * cfg.dt);
  // Spawn outside the decision zone so the first decision happens on arrival.
  const double max_offset = std::max(0.0, len - zone - 1e-9);
  const double min_gap = std::max({cfg.headway, 2.0 * cfg.capture_radius, 1.0});
  constexpr int kMaxAttempts = 10000;

  for (int id = 0; id < total; ++id) {
    VehicleState v;
    v.id = id;
    v.role = id < cfg.num_pursuers                    ? VehicleRole::Pursuer
             : id < cfg.num_pursuers + cfg.num_evaders ? VehicleRole::Evader
                                                       : VehicleRole::Background;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      v.lane = LaneId{static_cast<std::uint32_t>(uniform_index(s.rng, net.num_lanes()))};
      v.offset = uniform_real(s.rng, 0.0, max_offset);
      const Point p = net.position(v.lane, v.offset);
      placed = true;
      for (const auto& other : s.vehicles) {
        const bool same_lane_clash = other.lane == v.lane && std::abs(other.offset - v.offset) < cfg.headway;
        const bool both_pursuit = makes_decisions(v.role) && makes_decisions(other.role);
        if (same_lane_clash ||
            (both_pursuit && euclidean(p, net.position(other.lane, other.offset)) < min_gap)) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) throw SceneError("could not place vehicle " + std::to_string(id) + " after bounded retries");
    s.vehicles.push_back(v);
  }

  // Background routes: a seeded cyclic sequence of turns per vehicle.
  for (int b = 0; b < cfg.num_background; ++b) {
    BackgroundRoute route;
    const std::size_t n = 2 + uniform_index(s.rng, 4);
    for (std::size_t k = 0; k < n; ++k) route.cycle.push_back(action_from_index(uniform_index(s.rng, kNumActions)));
    s.routes.push_back(std::move(route));
  }

  s.light_phase.assign(net.num_intersections(), phase_at(cfg, 0));
  return s;
}

namespace detail {

inline TurnAction first_available(const TurnMask& mask) {
  for (std::size_t a = 0; a < kNumActions; ++a)
    if (mask[a]) return kTurnActions[a];
  throw ContractError("lane without successors");
}

}  // namespace detail

inline StepResult step(const RoadNetwork& net, const SimConfig& cfg, SimState& state, const Decisions& decisions) {
  StepResult result;
  const double len = net.lane_length();
  const double brake = -cfg.de_max;
  const int n_pursuers = cfg.num_pursuers;
  const int n_evaders = cfg.num_evaders;

  for (const auto& [id, turn] : decisions) {
    if (!needs_decision(net, cfg, state, id)) {
      throw ContractError("decision supplied for vehicle " + std::to_string(id) + " that does not need one");
    }
    (void)turn;
  }
  for (const auto& v : state.vehicles) {
    if (needs_decision(net, cfg, state, v.id) && !decisions.count(v.id)) {
      throw ContractError("missing decision for vehicle " + std::to_string(v.id));
    }
  }
  for (const auto& [id, turn] : decisions) state.vehicles[static_cast<std::size_t>(id)].pending_turn = turn;

  // Background vehicles latch the next turn of their route on entering the zone.
  for (auto& v : state.vehicles) {
    if (v.role != VehicleRole::Background || !v.active || v.pending_turn) continue;
    if (v.offset >= len - std::max(cfg.decision_zone, cfg.v_max * cfg.dt)) {
      auto& route = state.routes[static_cast<std::size_t>(v.id - n_pursuers - n_evaders)];
      v.pending_turn = route.cycle[route.cursor];
      route.cursor = (route.cursor + 1) % route.cycle.size();
    }
  }

  // Leaders are resolved against the positions at the start of the step.
  std::vector<std::vector<int>> by_lane(net.num_lanes());
  for (const auto& v : state.vehicles)
    if (v.active) by_lane[v.lane.index].push_back(v.id);
  const std::vector<VehicleState> before = state.vehicles;

  for (auto& v : state.vehicles) {
    if (!v.active) continue;
    double limit = std::numeric_limits<double>::infinity();
    bool stop_line = false;

    const auto& lane_info = net.lane(v.lane);
    if (lane_info.end_intersection) {
      const Signal sig = signal_for(cfg, state.clock, lane_info.heading);
      const double stop_speed = safe_speed(len - v.offset, brake, cfg.dt);
      if (sig == Signal::Red || (sig == Signal::Amber && stop_speed >= v.speed + cfg.de_max * cfg.dt)) {
        limit = std::min(limit, stop_speed);
        stop_line = true;
      }
    }

    double leader_offset = std::numeric_limits<double>::infinity();
    for (int other_id : by_lane[v.lane.index]) {
      if (other_id == v.id) continue;
      const VehicleState& o = before[static_cast<std::size_t>(other_id)];
      // Pursuers close in on evaders rather than keeping headway behind them.
      if (v.role == VehicleRole::Pursuer && o.role == VehicleRole::Evader) continue;
      const bool ahead = o.offset > v.offset || (o.offset == v.offset && o.id < v.id);
      if (ahead) leader_offset = std::min(leader_offset, o.offset);
    }
    if (std::isfinite(leader_offset)) {
      limit = std::min(limit, safe_speed(leader_offset - v.offset - cfg.headway, brake, cfg.dt));
    }

    double next = std::min(v.speed + cfg.ac_max * cfg.dt, cfg.v_max);
    next = std::min(next, limit);
    next = std::max(next, v.speed + cfg.de_max * cfg.dt);
    next = std::clamp(next, 0.0, cfg.v_max);
    v.speed = next;
    v.offset += next * cfg.dt;
    if (stop_line) v.offset = std::min(v.offset, len);

    if (v.offset > len) {
      const TurnMask mask = net.available_turns(v.lane);
      TurnAction turn = v.pending_turn.value_or(detail::first_available(mask));
      if (!mask[action_index(turn)]) turn = detail::first_available(mask);
      LaneCrossing crossing;
      crossing.vehicle_id = v.id;
      crossing.from = v.lane;
      crossing.signal =
          lane_info.end_intersection ? signal_for(cfg, state.clock, lane_info.heading) : Signal::Green;
      v.lane = *net.successor(v.lane, turn);
      crossing.to = v.lane;
      v.offset = std::min(v.offset - len, len);
      v.pending_turn.reset();
      result.crossings.push_back(crossing);
    }
  }

  state.clock += 1;
  std::fill(state.light_phase.begin(), state.light_phase.end(), phase_at(cfg, state.clock));

  for (int m = n_pursuers; m < n_pursuers + n_evaders; ++m) {
    VehicleState& evader = state.vehicles[static_cast<std::size_t>(m)];
    if (!evader.active) continue;
    for (int n = 0; n < n_pursuers; ++n) {
      if (!state.vehicles[static_cast<std::size_t>(n)].active) continue;
      if (distance(net, state, n, m) < cfg.capture_radius) {
        result.captures.push_back({m, n, state.clock});
        break;
      }
    }
  }
  for (const auto& ev : result.captures) {
    VehicleState& evader = state.vehicles[static_cast<std::size_t>(ev.evader_id)];
    evader.active = false;
    evader.speed = 0.0;
    evader.pending_turn.reset();
    state.captures.emplace_back(ev.evader_id, ev.step);
  }

  bool any_evader = false;
  for (int m = n_pursuers; m < n_pursuers + n_evaders; ++m)
    any_evader = any_evader || state.vehicles[static_cast<std::size_t>(m)].active;
  result.done = !any_evader || state.clock >= static_cast<std::uint64_t>(cfg.max_steps);
  return result;
}

inline int active_evaders(const SimConfig& cfg, const SimState& state) {
  int n = 0;
  for (int m = cfg.num_pursuers; m < cfg.num_pursuers + cfg.num_evaders; ++m)
    n += state.vehicles[static_cast<std::size_t>(m)].active ? 1 : 0;
  return n;
}

/// Trajectory log record per active vehicle: step,id,role,lane,offset,speed.
inline void write_trajectory(std::ostream& os, const SimState& state) {
  for (const auto& v : state.vehicles) {
    if (!v.active) continue;
    os << state.clock << ',' << v.id << ',' << to_string(v.role) << ',' << v.lane.index << ',' << v.offset << ','
       << v.speed << '\n';
  }
}

}  // namespace pursuit
