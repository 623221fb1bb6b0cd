#pragma once

// Run configuration: flat "key = value" text, '#' starts a comment.
// Overrides use the same key=value form.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pursuit/error.hpp"
#include "pursuit/evader_policy.hpp"
#include "pursuit/road_network.hpp"
#include "pursuit/traffic_sim.hpp"
#include "pursuit/trainer.hpp"

namespace pursuit {

struct RunConfig {
  int grid_rows = 3;
  int grid_cols = 3;
  double lane_length = 200.0;
  SimConfig sim;
  EvaderTrainConfig evader;
  TrainConfig train;
  std::uint64_t seed = 1;
  std::size_t eval_episodes = 20;
  std::vector<std::uint64_t> eval_seeds{101, 102, 103};
  std::string out_dir = "run";

  /// Propagates the master seed to every component.
  void sync_seeds() {
    sim.rng_seed = seed;
    evader.seed = derive_seed(seed, 0xe7ade5);
    train.seed = seed;
  }

  void validate() const {
    if (grid_rows < 2 || grid_cols < 2) throw ConfigError("grid_rows and grid_cols must be >= 2");
    if (!(lane_length > 0.0)) throw ConfigError("lane_length must be > 0");
    sim.validate();
    evader.validate();
    train.validate();
    if (eval_episodes == 0) throw ConfigError("eval_episodes must be >= 1");
    if (eval_seeds.empty()) throw ConfigError("eval_seeds must not be empty");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  }

  RoadNetwork network() const { return build_grid(grid_rows, grid_cols, lane_length); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Shortest text that reads back to the same double.
inline std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError(key + ": empty list element");
    out.push_back(parse_integer<T>(key, item));
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PURSUIT_INT(path, type)                                                               \
  Field {                                                                                     \
    [](RunConfig& c, const std::string& v) { c.path = parse_integer<type>(#path, v); },       \
        [](const RunConfig& c) { return std::to_string(c.path); }                             \
  }
#define PURSUIT_REAL(path)                                                                    \
  Field {                                                                                     \
    [](RunConfig& c, const std::string& v) { c.path = parse_real(#path, v); },                \
        [](const RunConfig& c) { return fmt_double(c.path); }                                 \
  }
#define PURSUIT_BOOL(path)                                                                    \
  Field {                                                                                     \
    [](RunConfig& c, const std::string& v) { c.path = parse_bool(#path, v); },                \
        [](const RunConfig& c) { return std::string(c.path ? "true" : "false"); }             \
  }

inline const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"seed", PURSUIT_INT(seed, std::uint64_t)},
      {"out_dir", Field{[](RunConfig& c, const std::string& v) { c.out_dir = v; },
                        [](const RunConfig& c) { return c.out_dir; }}},
      {"grid_rows", PURSUIT_INT(grid_rows, int)},
      {"grid_cols", PURSUIT_INT(grid_cols, int)},
      {"lane_length", PURSUIT_REAL(lane_length)},
      {"num_pursuers", PURSUIT_INT(sim.num_pursuers, int)},
      {"num_evaders", PURSUIT_INT(sim.num_evaders, int)},
      {"num_background", PURSUIT_INT(sim.num_background, int)},
      {"capture_radius", PURSUIT_REAL(sim.capture_radius)},
      {"v_max", PURSUIT_REAL(sim.v_max)},
      {"ac_max", PURSUIT_REAL(sim.ac_max)},
      {"de_max", PURSUIT_REAL(sim.de_max)},
      {"max_steps", PURSUIT_INT(sim.max_steps, int)},
      {"dt", PURSUIT_REAL(sim.dt)},
      {"light_green", PURSUIT_REAL(sim.light_green)},
      {"light_red", PURSUIT_REAL(sim.light_red)},
      {"amber", PURSUIT_REAL(sim.amber)},
      {"headway", PURSUIT_REAL(sim.headway)},
      {"decision_zone", PURSUIT_REAL(sim.decision_zone)},
      {"evader_alpha", PURSUIT_REAL(evader.alpha)},
      {"evader_gamma", PURSUIT_REAL(evader.gamma)},
      {"evader_epsilon", PURSUIT_REAL(evader.epsilon)},
      {"evader_epsilon_end", PURSUIT_REAL(evader.epsilon_end)},
      {"evader_episodes", PURSUIT_INT(evader.episodes, int)},
      {"evader_distance_weight", PURSUIT_REAL(evader.distance_weight)},
      {"evader_capture_penalty", PURSUIT_REAL(evader.capture_penalty)},
      {"episodes", PURSUIT_INT(train.episodes, int)},
      {"batch_size", PURSUIT_INT(train.batch_size, std::size_t)},
      {"learning_rate", PURSUIT_REAL(train.learning_rate)},
      {"gamma", PURSUIT_REAL(train.gamma)},
      {"epsilon", PURSUIT_REAL(train.epsilon)},
      {"history", PURSUIT_INT(train.history, std::size_t)},
      {"sync_period", PURSUIT_INT(train.sync_period, std::uint64_t)},
      {"mi_weight", PURSUIT_REAL(train.mi_weight)},
      {"replay_capacity", PURSUIT_INT(train.replay_capacity, std::size_t)},
      {"strategy_dim", PURSUIT_INT(train.strategy_dim, std::size_t)},
      {"include_adj", PURSUIT_BOOL(train.include_adj)},
      {"per_step_transitions", PURSUIT_BOOL(train.per_step_transitions)},
      {"reward_lambda", PURSUIT_REAL(train.reward.lambda)},
      {"reward_step_cost", PURSUIT_REAL(train.reward.step_cost)},
      {"reward_capture", PURSUIT_REAL(train.reward.capture_reward)},
      {"reward_nearest_only", PURSUIT_BOOL(train.reward.nearest_only)},
      {"eval_episodes", PURSUIT_INT(eval_episodes, std::size_t)},
      {"eval_seeds", Field{[](RunConfig& c, const std::string& v) {
                             c.eval_seeds = parse_list<std::uint64_t>("eval_seeds", v);
                           },
                           [](const RunConfig& c) { return join(c.eval_seeds); }}},
  };
  return f;
}

#undef PURSUIT_INT
#undef PURSUIT_REAL
#undef PURSUIT_BOOL

inline const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return &f;
  return nullptr;
}

inline std::pair<std::string, std::string> split_assignment(const std::string& line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
  std::string key = trim(line.substr(0, eq));
  std::string value = trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {key, value};
}

}  // namespace detail

/// Key/value pairs of a config text, in file order. Duplicate keys are errors.
inline std::vector<std::pair<std::string, std::string>> parse_assignments(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  std::map<std::string, int> seen;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (detail::trim(line).empty()) continue;
    auto kv = detail::split_assignment(line, "line " + std::to_string(line_no));
    if (!seen.emplace(kv.first, line_no).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + kv.first + "'");
    }
    out.push_back(std::move(kv));
  }
  return out;
}

inline void set_value(RunConfig& c, const std::string& key, const std::string& value) {
  const detail::Field* f = detail::find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(c, value);
}

struct ConfigSources {
  std::optional<std::string> file_text;
  std::vector<std::string> overrides;  // "key=value"
  std::optional<std::string> env_seed;  // PURSUIT_SEED
};

/// Defaults, then the file, then overrides. PURSUIT_SEED only applies when
/// neither the file nor an override sets the seed.
inline RunConfig build_config(const ConfigSources& src) {
  RunConfig c;
  bool seed_set = false;
  if (src.file_text) {
    for (const auto& [k, v] : parse_assignments(*src.file_text)) {
      set_value(c, k, v);
      seed_set = seed_set || k == "seed";
    }
  }
  for (const auto& o : src.overrides) {
    const auto [k, v] = detail::split_assignment(o, "override '" + o + "'");
    set_value(c, k, v);
    seed_set = seed_set || k == "seed";
  }
  if (!seed_set && src.env_seed) set_value(c, "seed", *src.env_seed);
  c.sync_seeds();
  c.validate();
  return c;
}

/// Canonical text of every key, in a fixed order.
inline std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& [k, f] : detail::fields()) out += k + " = " + f.get(c) + "\n";
  return out;
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : detail::fields()) out.push_back(k);
  return out;
}

}  // namespace pursuit
