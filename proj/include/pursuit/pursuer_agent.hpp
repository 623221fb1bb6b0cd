#pragma once

// Pursuer decision-making: state assembly, the shared online/target Q-network
// pair, replay memory, per-step reward and epsilon-greedy selection.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "pursuit/bytes.hpp"
#include "pursuit/error.hpp"
#include "pursuit/evader_policy.hpp"
#include "pursuit/nn_core.hpp"
#include "pursuit/observation.hpp"
#include "pursuit/opponent_model.hpp"
#include "pursuit/rng.hpp"
#include "pursuit/traffic_sim.hpp"

namespace pursuit {

/// State of pursuer `ego`: the joint observation window (newest last, so the
/// current joint observation is window.back()) and the strategy model.
struct PursuerState {
  std::vector<JointPursuerObservation> window;
  std::size_t ego = 0;
  StrategyModel pi_e;

  const JointPursuerObservation& op() const {
    if (window.empty()) throw ContractError("pursuer state without observations");
    return window.back();
  }

  bool operator==(const PursuerState&) const = default;
};

/// DQN input [op (ego first), pi_e]; width = observation width + d_pi.
inline SparseInput assemble(const RoadNetwork& net, const PursuerState& s) {
  SparseInput x = observation_features(net, s.op(), s.ego);
  const std::size_t base = x.dim;
  x.dim += s.pi_e.size();
  for (std::size_t k = 0; k < s.pi_e.size(); ++k) x.push(base + k, s.pi_e[k]);
  return x;
}

inline std::vector<double> assembled(const RoadNetwork& net, const PursuerState& s) {
  return assemble(net, s).to_dense();
}

struct DqnParams {
  MlpParams online;
  MlpParams target;
  std::uint64_t sync_period = 200;
  std::uint64_t steps_since_sync = 0;

  bool operator==(const DqnParams&) const = default;
};

inline DqnParams make_dqn(std::size_t state_dim, Rng& rng, const std::vector<std::size_t>& hidden = {64, 64},
                          std::uint64_t sync_period = 200) {
  if (sync_period == 0) throw ConfigError("target sync period must be >= 1");
  std::vector<std::size_t> dims{state_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(kNumActions);
  DqnParams p;
  p.online = make_mlp(dims, rng);
  p.target = p.online;
  p.sync_period = sync_period;
  return p;
}

inline std::vector<double> q_values(const DqnParams& p, const SparseInput& x) {
  Tape tape;
  return forward(p.online, x, tape);
}

inline std::vector<double> q_values(const RoadNetwork& net, const DqnParams& p, const PursuerState& s) {
  return q_values(p, assemble(net, s));
}

inline TurnAction epsilon_greedy(std::span<const double> q, double epsilon, const TurnMask& allowed, Rng& rng) {
  if (epsilon > 0.0 && uniform01(rng) < epsilon) return random_allowed(allowed, rng);
  return kTurnActions[masked_argmax(q, allowed)];
}

inline TurnAction select_action(const RoadNetwork& net, const DqnParams& p, const PursuerState& s, double epsilon,
                                LaneId lane, Rng& rng) {
  const auto allowed = net.available_turns(lane);
  if (epsilon > 0.0 && uniform01(rng) < epsilon) return random_allowed(allowed, rng);
  return kTurnActions[masked_argmax(q_values(net, p, s), allowed)];
}

/// Increments the counter and copies online into target once it reaches C.
inline void target_sync(DqnParams& p) {
  ++p.steps_since_sync;
  if (p.steps_since_sync >= p.sync_period) {
    p.target = p.online;
    p.steps_since_sync = 0;
  }
}

struct RewardConfig {
  double lambda = 2.0;
  double step_cost = 0.2;  // subtracted every step
  double capture_reward = 10.0;
  bool nearest_only = false;  // only the nearest visible evader counts
};

struct RewardParts {
  double distance = 0.0;
  double time = 0.0;
  double task = 0.0;

  double total() const { return distance + time + task; }
};

/// Per-step reward of pursuer n between two consecutive states. Evaders
/// visible to n now (and therefore still active) contribute their distance
/// change; captured or no longer visible evaders contribute nothing.
inline RewardParts reward_parts(const RoadNetwork& net, const SimConfig& cfg, const SimState& prev,
                                const SimState& now, int pursuer_id, std::span<const CaptureEvent> captures,
                                const RewardConfig& rc = {}) {
  RewardParts r;
  const PursuerView view = pursuer_observe(net, cfg, now, pursuer_id);
  double delta_sum = 0.0;
  double nearest = std::numeric_limits<double>::infinity();
  double nearest_delta = 0.0;
  for (const auto& seen : view.visible) {
    const double d_now = distance(net, now, pursuer_id, seen.evader_id);
    const double d_prev = distance(net, prev, pursuer_id, seen.evader_id);
    delta_sum += d_now - d_prev;
    if (d_now < nearest) {
      nearest = d_now;
      nearest_delta = d_now - d_prev;
    }
  }
  r.distance = -rc.lambda * (rc.nearest_only ? nearest_delta : delta_sum);
  r.time = -rc.step_cost;
  r.task = captures.empty() ? 0.0 : rc.capture_reward;
  return r;
}

inline double compute_reward(const RoadNetwork& net, const SimConfig& cfg, const SimState& prev,
                             const SimState& now, int pursuer_id, std::span<const CaptureEvent> captures,
                             const RewardConfig& rc = {}) {
  return reward_parts(net, cfg, prev, now, pursuer_id, captures, rc).total();
}

/// Decision-to-decision transition. `reward` is the discounted sum of the
/// per-step rewards collected over `steps` environment steps, so the
/// bootstrap factor is gamma^steps.
struct Transition {
  PursuerState s;
  TurnAction a = TurnAction::Straight;
  double reward = 0.0;
  int steps = 1;
  PursuerState s_next;
  TurnMask next_allowed{true, true, true};
  bool terminal = false;

  bool operator==(const Transition&) const = default;
};

inline double max_allowed(std::span<const double> q, const TurnMask& allowed) {
  return q[masked_argmax(q, allowed)];
}

/// y = r + gamma^k * max over the turns available after s_next of Q_target,
/// or y = r for terminal transitions.
inline double q_target_from(std::span<const double> target_q_next, const Transition& t, double gamma) {
  if (t.terminal) return t.reward;
  return t.reward + std::pow(gamma, t.steps) * max_allowed(target_q_next, t.next_allowed);
}

inline double q_target(const RoadNetwork& net, const DqnParams& p, const Transition& t, double gamma) {
  if (t.terminal) return t.reward;
  Tape tape;
  return q_target_from(forward(p.target, assemble(net, t.s_next), tape), t, gamma);
}

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be >= 1");
  }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }

  /// i-th stored transition, oldest first.
  const Transition& at(std::size_t i) const { return items_.at((head_ + i) % items_.size()); }

  /// Indices of a uniform batch without replacement, empty when underfull.
  std::optional<std::vector<std::size_t>> sample_indices(std::size_t batch, Rng& rng) const {
    if (batch == 0 || items_.size() < batch) return std::nullopt;
    scratch_.resize(items_.size());
    std::iota(scratch_.begin(), scratch_.end(), std::size_t{0});
    for (std::size_t k = 0; k < batch; ++k) {
      const std::size_t j = k + uniform_index(rng, scratch_.size() - k);
      std::swap(scratch_[k], scratch_[j]);
    }
    std::vector<std::size_t> out(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(batch));
    for (auto& i : out) i = (i + items_.size() - head_) % items_.size();  // storage slot -> age order
    return out;
  }

  std::optional<std::vector<const Transition*>> sample_batch(std::size_t batch, Rng& rng) const {
    auto idx = sample_indices(batch, rng);
    if (!idx) return std::nullopt;
    std::vector<const Transition*> out;
    for (auto i : *idx) out.push_back(&at(i));
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // oldest item once full
  std::vector<Transition> items_;
  mutable std::vector<std::size_t> scratch_;
};

inline void buffer_push(ReplayBuffer& buf, Transition t) { buf.push(std::move(t)); }

inline std::optional<std::vector<const Transition*>> sample_batch(const ReplayBuffer& buf, std::size_t batch,
                                                                  Rng& rng) {
  return buf.sample_batch(batch, rng);
}

inline constexpr std::string_view kDqnMagic = "PDQN";

inline std::vector<std::uint8_t> save_dqn(const DqnParams& p) {
  ByteWriter w;
  w.tag(kDqnMagic);
  w.u64(p.sync_period);
  w.u64(p.steps_since_sync);
  write_mlp(w, p.online);
  write_mlp(w, p.target);
  return w.release();
}

inline DqnParams load_dqn(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_tag(kDqnMagic);
  DqnParams p;
  p.sync_period = r.u64();
  p.steps_since_sync = r.u64();
  p.online = read_mlp(r);
  p.target = read_mlp(r);
  if (!r.at_end()) throw FormatError("trailing bytes after DQN");
  if (p.sync_period == 0) throw FormatError("sync period is zero");
  auto shape = [](const MlpParams& m) {
    std::vector<std::size_t> s;
    for (const auto& l : m.layers) s.push_back(l.in * 100003 + l.out);
    return s;
  };
  if (shape(p.online) != shape(p.target)) throw FormatError("online and target networks differ in shape");
  if (p.online.output_dim() != kNumActions) throw FormatError("Q-network output width must be 3");
  return p;
}

}  // namespace pursuit
