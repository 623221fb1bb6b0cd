#pragma once

// Evading team: one Q-table per evader, each conditioned on the joint cell
// observation of all evaders, trained against randomly moving pursuers.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pursuit/error.hpp"
#include "pursuit/observation.hpp"
#include "pursuit/rng.hpp"
#include "pursuit/traffic_sim.hpp"

namespace pursuit {

/// Concatenated cell counts of all evaders in id order (6 per evader);
/// captured evaders contribute zeros.
using JointEvaderKey = std::vector<int>;

struct JointEvaderKeyHash {
  std::size_t operator()(const JointEvaderKey& k) const {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (int v : k) {
      h ^= static_cast<std::size_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
  }
};

using ActionValues = std::array<double, kNumActions>;

class QTable {
 public:
  double value(const JointEvaderKey& key, TurnAction a) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? 0.0 : it->second[action_index(a)];
  }

  ActionValues values(const JointEvaderKey& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? ActionValues{} : it->second;
  }

  void set(const JointEvaderKey& key, TurnAction a, double v) { entries_[key][action_index(a)] = v; }

  double max_value(const JointEvaderKey& key) const {
    const ActionValues v = values(key);
    return *std::max_element(v.begin(), v.end());
  }

  std::size_t num_keys() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Entries sorted by key, for deterministic output.
  std::vector<std::pair<JointEvaderKey, ActionValues>> sorted() const {
    std::vector<std::pair<JointEvaderKey, ActionValues>> out(entries_.begin(), entries_.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

  void scale(double c) {
    for (auto& [k, v] : entries_)
      for (double& x : v) x *= c;
  }

  bool operator==(const QTable& o) const { return entries_ == o.entries_; }

 private:
  std::unordered_map<JointEvaderKey, ActionValues, JointEvaderKeyHash> entries_;
};

using QTableSet = std::vector<QTable>;

struct EvaderTrainConfig {
  double alpha = 0.1;
  double gamma = 0.95;
  double epsilon = 0.1;      // start of the linear exploration schedule
  double epsilon_end = 0.01;  // end of the schedule
  int episodes = 2000;
  double distance_weight = 2.0;
  double capture_penalty = 10.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("evader alpha must be in (0, 1]");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("evader gamma must be in [0, 1]");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("evader epsilon must be in [0, 1]");
    if (!(epsilon_end >= 0.0 && epsilon_end <= 1.0)) throw ConfigError("evader epsilon_end must be in [0, 1]");
    if (episodes < 0) throw ConfigError("evader episodes must be >= 0");
  }
};

inline JointEvaderKey joint_evader_key(const RoadNetwork& net, const SimConfig& cfg, const SimState& state) {
  JointEvaderKey key;
  key.reserve(kNumCells * static_cast<std::size_t>(cfg.num_evaders));
  for (int m = cfg.num_pursuers; m < cfg.num_pursuers + cfg.num_evaders; ++m) {
    const EvaderObservation obs = evader_observe(net, cfg, state, m);
    key.insert(key.end(), obs.cell_counts.begin(), obs.cell_counts.end());
  }
  return key;
}

/// Q(key,a) += alpha * (r + gamma * max_a' Q(next_key,a') - Q(key,a)). An
/// empty next_key marks a terminal transition (no bootstrap).
inline void q_update(QTable& tbl, const JointEvaderKey& key, TurnAction a, double r,
                     const std::optional<JointEvaderKey>& next_key, double alpha, double gamma) {
  const double bootstrap = next_key ? gamma * tbl.max_value(*next_key) : 0.0;
  const double q = tbl.value(key, a);
  tbl.set(key, a, q + alpha * (r + bootstrap - q));
}

inline void q_update(QTable& tbl, const JointEvaderKey& key, TurnAction a, double r, const JointEvaderKey& next_key,
                     const EvaderTrainConfig& cfg) {
  q_update(tbl, key, a, r, std::optional<JointEvaderKey>(next_key), cfg.alpha, cfg.gamma);
}

/// Greedy index over the allowed entries of `values`; ties go to the lowest index.
inline std::size_t masked_argmax(std::span<const double> values, const TurnMask& allowed) {
  std::size_t best = kNumActions;
  for (std::size_t a = 0; a < kNumActions; ++a) {
    if (!allowed[a]) continue;
    if (best == kNumActions || values[a] > values[best]) best = a;
  }
  if (best == kNumActions) throw ContractError("no allowed action");
  return best;
}

inline TurnAction random_allowed(const TurnMask& allowed, Rng& rng) {
  std::array<std::size_t, kNumActions> idx{};
  std::size_t n = 0;
  for (std::size_t a = 0; a < kNumActions; ++a)
    if (allowed[a]) idx[n++] = a;
  if (n == 0) throw ContractError("no allowed action");
  return kTurnActions[idx[uniform_index(rng, n)]];
}

/// Epsilon-greedy restricted to the turns that exist.
inline TurnAction select_action(const QTable& tbl, const JointEvaderKey& key, double epsilon, const TurnMask& allowed,
                                Rng& rng) {
  if (epsilon > 0.0 && uniform01(rng) < epsilon) return random_allowed(allowed, rng);
  const ActionValues v = tbl.values(key);
  return kTurnActions[masked_argmax(v, allowed)];
}

inline TurnAction select_action(const QTable& tbl, const JointEvaderKey& key, double epsilon, Rng& rng) {
  return select_action(tbl, key, epsilon, TurnMask{true, true, true}, rng);
}

/// Distance from a vehicle to the nearest active pursuer.
inline double nearest_pursuer_distance(const RoadNetwork& net, const SimConfig& cfg, const SimState& state, int id) {
  double best = std::numeric_limits<double>::infinity();
  for (int n = 0; n < cfg.num_pursuers; ++n) {
    if (state.vehicle(n).active) best = std::min(best, distance(net, state, n, id));
  }
  return best;
}

/// Evader decisions for one step. `tables` empty means uniformly random evaders.
inline void decide_evaders(const RoadNetwork& net, const SimConfig& cfg, const SimState& state,
                           const QTableSet& tables, double epsilon, Rng& rng, Decisions& out) {
  const auto ids = vehicles_needing_decision(net, cfg, state, VehicleRole::Evader);
  if (ids.empty()) return;
  const JointEvaderKey key = joint_evader_key(net, cfg, state);
  for (int id : ids) {
    const TurnMask allowed = net.available_turns(state.vehicle(id).lane);
    if (tables.empty()) {
      out[id] = random_allowed(allowed, rng);
    } else {
      out[id] = select_action(tables[static_cast<std::size_t>(id - cfg.num_pursuers)], key, epsilon, allowed, rng);
    }
  }
}

inline void decide_random_pursuers(const RoadNetwork& net, const SimConfig& cfg, const SimState& state, Rng& rng,
                                   Decisions& out) {
  for (int id : vehicles_needing_decision(net, cfg, state, VehicleRole::Pursuer)) {
    out[id] = random_allowed(net.available_turns(state.vehicle(id).lane), rng);
  }
}

struct EvaderEpisodeStats {
  int steps = 0;
  int captures = 0;
  double mean_reward = 0.0;
};

/// Trains the evaders' joint dynamic strategy with Eq.-1 Q-learning against
/// randomly moving pursuers. Transitions run from one decision of an evader
/// to its next decision (or capture).
inline QTableSet pretrain(const RoadNetwork& net, const SimConfig& sim_cfg, const EvaderTrainConfig& cfg,
                          std::vector<EvaderEpisodeStats>* stats = nullptr) {
  sim_cfg.validate();
  cfg.validate();
  const auto M = static_cast<std::size_t>(sim_cfg.num_evaders);
  QTableSet tables(M);
  Rng rng(derive_seed(cfg.seed, 0));

  struct Open {
    JointEvaderKey key;
    TurnAction action = TurnAction::Straight;
    double reward = 0.0;
  };

  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const double frac = cfg.episodes > 1 ? static_cast<double>(ep) / (cfg.episodes - 1) : 0.0;
    const double eps = cfg.epsilon + (cfg.epsilon_end - cfg.epsilon) * frac;
    SimConfig sc = sim_cfg;
    sc.rng_seed = derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(ep));
    SimState state = reset(net, sc);

    std::vector<std::optional<Open>> open(M);
    std::vector<double> prev_dist(M);
    for (std::size_t m = 0; m < M; ++m) prev_dist[m] = nearest_pursuer_distance(net, sc, state, sc.num_pursuers + int(m));
    double reward_sum = 0.0;
    int reward_count = 0;

    bool done = false;
    while (!done) {
      Decisions decisions;
      const auto deciding = vehicles_needing_decision(net, sc, state, VehicleRole::Evader);
      if (!deciding.empty()) {
        const JointEvaderKey key = joint_evader_key(net, sc, state);
        for (int id : deciding) {
          const auto m = static_cast<std::size_t>(id - sc.num_pursuers);
          if (open[m]) q_update(tables[m], open[m]->key, open[m]->action, open[m]->reward, key, cfg.alpha, cfg.gamma);
          const TurnAction a = select_action(tables[m], key, eps, net.available_turns(state.vehicle(id).lane), rng);
          open[m] = Open{key, a, 0.0};
          decisions[id] = a;
        }
      }
      decide_random_pursuers(net, sc, state, rng, decisions);

      const StepResult res = step(net, sc, state, decisions);
      done = res.done;

      for (std::size_t m = 0; m < M; ++m) {
        const int id = sc.num_pursuers + static_cast<int>(m);
        const bool captured_now = std::any_of(res.captures.begin(), res.captures.end(),
                                              [id](const CaptureEvent& e) { return e.evader_id == id; });
        if (!state.vehicle(id).active && !captured_now) continue;
        double r = 0.0;
        if (captured_now) {
          r = -cfg.capture_penalty;
        } else {
          const double d = nearest_pursuer_distance(net, sc, state, id);
          r = cfg.distance_weight * (d - prev_dist[m]);
          prev_dist[m] = d;
        }
        reward_sum += r;
        ++reward_count;
        if (open[m]) open[m]->reward += r;
        if (captured_now && open[m]) {
          q_update(tables[m], open[m]->key, open[m]->action, open[m]->reward, std::nullopt, cfg.alpha, cfg.gamma);
          open[m].reset();
        }
      }
    }
    // Time limit: bootstrap the still-open transitions from the final observation.
    const JointEvaderKey final_key = joint_evader_key(net, sc, state);
    for (std::size_t m = 0; m < M; ++m) {
      if (open[m]) q_update(tables[m], open[m]->key, open[m]->action, open[m]->reward, final_key, cfg.alpha, cfg.gamma);
    }
    if (stats) {
      stats->push_back({static_cast<int>(state.clock), static_cast<int>(state.captures.size()),
                        reward_count ? reward_sum / reward_count : 0.0});
    }
  }
  return tables;
}

/// Steps until every evader is captured (or the step limit), with random
/// pursuers and evaders driven by `tables` (greedy) or at random when empty.
inline int evasion_duration(const RoadNetwork& net, const SimConfig& sim_cfg, const QTableSet& tables,
                            std::uint64_t seed) {
  SimConfig sc = sim_cfg;
  sc.rng_seed = seed;
  SimState state = reset(net, sc);
  Rng rng(derive_seed(seed, 7));
  bool done = false;
  while (!done) {
    Decisions d;
    decide_evaders(net, sc, state, tables, 0.0, rng, d);
    decide_random_pursuers(net, sc, state, rng, d);
    done = step(net, sc, state, d).done;
  }
  return static_cast<int>(state.clock);
}

// Text format: one line per (key, action) entry, "k1,k2,...|action|value",
// values printed with 17 significant digits so the round trip is exact.
inline std::string save_qtable(const QTable& tbl) {
  std::ostringstream os;
  char buf[64];
  for (const auto& [key, vals] : tbl.sorted()) {
    for (std::size_t a = 0; a < kNumActions; ++a) {
      for (std::size_t i = 0; i < key.size(); ++i) os << (i ? "," : "") << key[i];
      std::snprintf(buf, sizeof buf, "%.17g", vals[a]);
      os << '|' << a << '|' << buf << '\n';
    }
  }
  return os.str();
}

namespace detail {

inline int parse_int(std::string_view s, std::size_t line_no) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw FormatError("q-table line " + std::to_string(line_no) + ": bad integer '" + std::string(s) + "'");
  }
  return v;
}

inline void parse_qtable_line(const std::string& line, std::size_t line_no, QTable& tbl,
                              std::map<std::pair<JointEvaderKey, int>, bool>& seen) {
  const auto bar1 = line.find('|');
  const auto bar2 = bar1 == std::string::npos ? std::string::npos : line.find('|', bar1 + 1);
  if (bar2 == std::string::npos || line.find('|', bar2 + 1) != std::string::npos) {
    throw FormatError("q-table line " + std::to_string(line_no) + ": expected key|action|value");
  }
  JointEvaderKey key;
  std::string_view keys(line.data(), bar1);
  while (!keys.empty()) {
    const auto comma = keys.find(',');
    key.push_back(parse_int(keys.substr(0, comma), line_no));
    if (comma == std::string_view::npos) break;
    keys.remove_prefix(comma + 1);
  }
  const int action = parse_int(std::string_view(line).substr(bar1 + 1, bar2 - bar1 - 1), line_no);
  if (action < 0 || action >= static_cast<int>(kNumActions)) {
    throw FormatError("q-table line " + std::to_string(line_no) + ": action out of range");
  }
  const std::string value_str = line.substr(bar2 + 1);
  char* end = nullptr;
  const double value = std::strtod(value_str.c_str(), &end);
  if (value_str.empty() || end != value_str.c_str() + value_str.size() || !std::isfinite(value)) {
    throw FormatError("q-table line " + std::to_string(line_no) + ": bad value");
  }
  if (!seen.emplace(std::make_pair(key, action), true).second) {
    throw FormatError("q-table line " + std::to_string(line_no) + ": duplicate entry");
  }
  tbl.set(key, kTurnActions[static_cast<std::size_t>(action)], value);
}

}  // namespace detail

inline QTable load_qtable(const std::string& text) {
  QTable tbl;
  std::map<std::pair<JointEvaderKey, int>, bool> seen;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    detail::parse_qtable_line(line, line_no, tbl, seen);
  }
  return tbl;
}

/// A table set is written as "[evader m]" headers, each followed by that
/// evader's table in the single-table format.
inline std::string save_qtables(const QTableSet& tables) {
  std::string out;
  for (std::size_t m = 0; m < tables.size(); ++m) {
    out += "[evader " + std::to_string(m) + "]\n";
    out += save_qtable(tables[m]);
  }
  return out;
}

inline QTableSet load_qtables(const std::string& text) {
  QTableSet tables;
  std::map<std::pair<JointEvaderKey, int>, bool> seen;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.rfind("[evader ", 0) == 0) {
      if (line != "[evader " + std::to_string(tables.size()) + "]") {
        throw FormatError("q-table line " + std::to_string(line_no) + ": unexpected section header");
      }
      tables.emplace_back();
      seen.clear();
      continue;
    }
    if (tables.empty()) throw FormatError("q-table line " + std::to_string(line_no) + ": entry before a section");
    detail::parse_qtable_line(line, line_no, tables.back(), seen);
  }
  return tables;
}

}  // namespace pursuit
