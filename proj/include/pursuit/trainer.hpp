#pragma once

// Pursuer training loop against frozen evader tables, greedy evaluation,
// run checkpoints and the metrics log.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pursuit/bytes.hpp"
#include "pursuit/error.hpp"
#include "pursuit/evader_policy.hpp"
#include "pursuit/loss_core.hpp"
#include "pursuit/observation.hpp"
#include "pursuit/opponent_model.hpp"
#include "pursuit/pursuer_agent.hpp"
#include "pursuit/rng.hpp"
#include "pursuit/traffic_sim.hpp"

namespace pursuit {

enum class Ablation { None, NoMi, NoAdj };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoMi: return "no-mi";
    case Ablation::NoAdj: return "no-adj";
  }
  return "?";
}

inline std::optional<Ablation> parse_ablation(const std::string& s) {
  if (s == "none") return Ablation::None;
  if (s == "no-mi") return Ablation::NoMi;
  if (s == "no-adj") return Ablation::NoAdj;
  return std::nullopt;
}

struct TrainConfig {
  int episodes = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double gamma = 0.95;
  double epsilon = 0.05;
  std::size_t history = 3;
  std::uint64_t sync_period = 200;
  double mi_weight = 1.0;
  std::size_t replay_capacity = 10000;
  std::uint64_t seed = 1;
  bool include_adj = true;
  bool per_step_transitions = false;  // record every step instead of decision to decision
  bool plain_dqn_reference = false;   // update through the plain DQN path (needs mi_weight 0)
  std::size_t strategy_dim = kStrategyDim;
  std::vector<std::size_t> encoder_hidden{128, 128, 128};
  std::vector<std::size_t> dqn_hidden{64, 64};
  std::size_t critic_hidden = 64;
  std::size_t critic_proj = 32;
  RewardConfig reward;

  void apply(Ablation a) {
    if (a == Ablation::NoMi) mi_weight = 0.0;
    if (a == Ablation::NoAdj) include_adj = false;
  }

  void validate() const {
    if (episodes < 0) throw ConfigError("episodes must be >= 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must be in [0, 1]");
    if (history == 0) throw ConfigError("history must be >= 1");
    if (sync_period == 0) throw ConfigError("sync_period must be >= 1");
    if (!std::isfinite(mi_weight) || mi_weight < 0.0) throw ConfigError("mi_weight must be >= 0");
    if (replay_capacity < batch_size) throw ConfigError("replay_capacity must be >= batch_size");
    if (strategy_dim == 0) throw ConfigError("strategy_dim must be >= 1");
    if (critic_hidden == 0 || critic_proj == 0) throw ConfigError("critic widths must be >= 1");
    for (auto w : encoder_hidden)
      if (w == 0) throw ConfigError("encoder hidden widths must be >= 1");
    for (auto w : dqn_hidden)
      if (w == 0) throw ConfigError("dqn hidden widths must be >= 1");
    if (plain_dqn_reference && mi_weight != 0.0) throw ConfigError("plain DQN reference requires mi_weight 0");
  }
};

struct EpisodeMetrics {
  int episode = 0;
  double undiscounted = 0.0;  // mean over pursuers of sum_t r_t
  double discounted = 0.0;    // mean over pursuers of sum_t gamma^t r_t
  int completion_step = 0;    // step at which the last evader was caught, else T
  int captures = 0;
  std::vector<int> capture_times;  // per evader, -1 when never caught
  double l1 = 0.0;                 // means over this episode's updates
  double mi = 0.0;
  double total_loss = 0.0;
  int updates = 0;

  bool operator==(const EpisodeMetrics&) const = default;
};

/// Optional instrumentation callbacks.
struct TrainHooks {
  std::function<void(const Transition&)> on_transition;
  std::function<void(std::uint64_t step, const JointPursuerObservation&)> on_observation;
  std::function<void(std::uint64_t step, const std::vector<JointPursuerObservation>&)> on_encode;
  std::function<void(int pursuer, const RewardParts&, const SimState& prev, const SimState& now,
                     const StepResult&)>
      on_reward;
};

/// Builds the networks for a scene; the critic draws from its own seed
/// stream so adding or dropping it leaves every other initial value intact.
inline UnitedModel make_model(const RoadNetwork& net, const SimConfig& sc, const TrainConfig& tc) {
  const std::size_t w = observation_width(net, sc);
  Rng init(derive_seed(tc.seed, 3));
  UnitedModel m;
  m.encoder = make_encoder(w, tc.history, init, tc.encoder_hidden, tc.strategy_dim);
  m.dqn = make_dqn(w + tc.strategy_dim, init, tc.dqn_hidden, tc.sync_period);
  Rng critic_init(derive_seed(tc.seed, 4));
  m.critic = make_critic(w, tc.strategy_dim, critic_init, tc.critic_hidden, tc.critic_proj);
  return m;
}

namespace detail {

struct RolloutContext {
  const RoadNetwork& net;
  SimConfig sc;
  const EncoderParams& encoder;
  const DqnParams& dqn;
  const QTableSet& evaders;
  double epsilon = 0.0;
  double gamma = 0.95;
  bool include_adj = true;
  bool per_step = false;
  RewardConfig reward;
  const TrainHooks* hooks = nullptr;
};

struct OpenTransition {
  PursuerState s;
  TurnAction a = TurnAction::Straight;
  double reward = 0.0;
  int steps = 0;
};

/// One episode. `store` receives finished transitions; `after_step` runs
/// once per environment step with the number of transitions stored in it.
inline EpisodeMetrics rollout(const RolloutContext& ctx, std::uint64_t env_seed, Rng& act_rng,
                              const std::function<void(Transition)>& store,
                              const std::function<void(int stored)>& after_step) {
  const RoadNetwork& net = ctx.net;
  SimConfig sc = ctx.sc;
  sc.rng_seed = env_seed;
  SimState state = reset(net, sc);
  Rng evader_rng(derive_seed(env_seed, 11));

  const auto N = static_cast<std::size_t>(sc.num_pursuers);
  ObservationPool pool(ctx.encoder.history);
  pool.push(joint_observe(net, sc, state, ctx.include_adj));
  if (ctx.hooks && ctx.hooks->on_observation) ctx.hooks->on_observation(state.clock, pool.window().back());
  StrategyModel pi = init_strategy(ctx.encoder.strategy_dim());

  std::vector<std::optional<OpenTransition>> open(N);
  std::vector<double> undiscounted(N, 0.0), discounted(N, 0.0);
  EpisodeMetrics m;
  m.capture_times.assign(static_cast<std::size_t>(sc.num_evaders), -1);
  Tape tape;
  double discount = 1.0;

  auto finish = [&](std::size_t n, const PursuerState& s_next, bool terminal) {
    OpenTransition& o = *open[n];
    Transition t{std::move(o.s), o.a, o.reward, o.steps, s_next,
                 net.available_turns(state.vehicle(static_cast<int>(n)).lane), terminal};
    if (ctx.hooks && ctx.hooks->on_transition) ctx.hooks->on_transition(t);
    if (store) store(std::move(t));
    open[n].reset();
  };

  bool done = false;
  while (!done) {
    int stored = 0;
    Decisions decisions;
    decide_evaders(net, sc, state, ctx.evaders, 0.0, evader_rng, decisions);

    const auto deciding = vehicles_needing_decision(net, sc, state, VehicleRole::Pursuer);
    std::vector<std::uint8_t> decides(N, 0);
    for (int id : deciding) decides[static_cast<std::size_t>(id)] = 1;
    std::vector<JointPursuerObservation> window;
    for (std::size_t n = 0; n < N; ++n) {
      if (!decides[n] && !(ctx.per_step && open[n])) continue;
      if (window.empty()) window = pool.window();
      PursuerState s{window, n, pi};
      const TurnAction latched = open[n] ? open[n]->a : TurnAction::Straight;
      if (open[n]) {
        finish(n, s, false);
        ++stored;
      }
      TurnAction a;
      if (decides[n]) {
        const LaneId lane = state.vehicle(static_cast<int>(n)).lane;
        const auto q = forward(ctx.dqn.online, assemble(net, s), tape);
        a = epsilon_greedy(q, ctx.epsilon, net.available_turns(lane), act_rng);
        decisions[static_cast<int>(n)] = a;
      } else {
        a = latched;  // per-step mode between decisions: the last choice stays in force
      }
      open[n] = OpenTransition{std::move(s), a, 0.0, 0};
    }

    const SimState prev = state;
    const StepResult res = step(net, sc, state, decisions);
    done = res.done;
    for (const auto& ev : res.captures) {
      m.capture_times[static_cast<std::size_t>(ev.evader_id - sc.num_pursuers)] = static_cast<int>(ev.step);
    }

    for (std::size_t n = 0; n < N; ++n) {
      const RewardParts parts = reward_parts(net, sc, prev, state, static_cast<int>(n), res.captures, ctx.reward);
      if (ctx.hooks && ctx.hooks->on_reward) ctx.hooks->on_reward(static_cast<int>(n), parts, prev, state, res);
      const double r = parts.total();
      undiscounted[n] += r;
      discounted[n] += discount * r;
      if (open[n]) {
        open[n]->reward += std::pow(ctx.gamma, open[n]->steps) * r;
        ++open[n]->steps;
      }
    }
    discount *= ctx.gamma;

    pool.push(joint_observe(net, sc, state, ctx.include_adj));
    window = pool.window();
    if (ctx.hooks && ctx.hooks->on_observation) ctx.hooks->on_observation(state.clock, window.back());
    if (ctx.hooks && ctx.hooks->on_encode) ctx.hooks->on_encode(state.clock, window);
    pi = encode(ctx.encoder, window_features(net, window), tape);

    if (done) {
      const bool all_caught = active_evaders(sc, state) == 0;
      for (std::size_t n = 0; n < N; ++n) {
        if (!open[n]) continue;
        finish(n, PursuerState{window, n, pi}, all_caught);
        ++stored;
      }
    }
    if (after_step) after_step(stored);
  }

  for (std::size_t n = 0; n < N; ++n) {
    m.undiscounted += undiscounted[n];
    m.discounted += discounted[n];
  }
  m.undiscounted /= static_cast<double>(N);
  m.discounted /= static_cast<double>(N);
  m.captures = static_cast<int>(state.captures.size());
  m.completion_step = active_evaders(sc, state) == 0 ? static_cast<int>(state.clock) : sc.max_steps;
  return m;
}

}  // namespace detail

/// Turns stored transitions into learner inputs. The TD target uses the
/// target network on s_next with the strategy model recomputed by the
/// current encoder. When observations carry the topology block it is
/// supplied as a shared input instead of per item.
inline LearnBatch prepare_batch(const RoadNetwork& net, const UnitedModel& m,
                                std::span<const Transition* const> batch, double gamma) {
  LearnBatch lb;
  if (batch.empty()) return lb;
  const JointPursuerObservation& first = batch.front()->s.op();
  const bool shared = first.include_adj;
  if (shared) {
    const std::size_t n = first.pursuer_locs.size(), mm = first.evader_locs.size();
    lb.window_shared = adjacency_feature_indices(net, n, mm, m.encoder.history);
    lb.op_shared = adjacency_feature_indices(net, n, mm, 1);
  }
  auto enc_shared = detail::shared_for(m.encoder.mlp, lb.window_shared);
  auto target_shared = detail::shared_for(m.dqn.target, lb.op_shared);
  lb.items.reserve(batch.size());
  Tape tape;
  for (const Transition* t : batch) {
    if (t->s.op().include_adj != shared || t->s_next.op().include_adj != shared) {
      throw ContractError("batch mixes observations with and without topology");
    }
    LearnItem it;
    it.window = window_features(net, t->s.window, !shared);
    it.op_ego = observation_features(net, t->s.op(), t->s.ego, !shared);
    it.op_canon = observation_features(net, t->s.op(), std::nullopt, !shared);
    it.action = t->a;
    if (t->terminal) {
      it.y = t->reward;
    } else {
      const StrategyModel pi_next =
          forward(m.encoder.mlp, window_features(net, t->s_next.window, !shared), tape, detail::ptr(enc_shared));
      const SparseInput x_next =
          with_strategy(observation_features(net, t->s_next.op(), t->s_next.ego, !shared), pi_next);
      it.y = q_target_from(forward(m.dqn.target, x_next, tape, detail::ptr(target_shared)), *t, gamma);
    }
    lb.items.push_back(std::move(it));
  }
  return lb;
}

struct TrainResult {
  UnitedModel model;
  std::vector<EpisodeMetrics> metrics;
};

inline TrainResult train(const RoadNetwork& net, const SimConfig& sim_cfg, const TrainConfig& tc,
                         const QTableSet& evaders, const TrainHooks* hooks = nullptr) {
  sim_cfg.validate();
  tc.validate();
  if (evaders.size() != static_cast<std::size_t>(sim_cfg.num_evaders)) {
    throw ConfigError("evader tables do not match num_evaders");
  }
  TrainResult out;
  out.model = make_model(net, sim_cfg, tc);
  UnitedModel& model = out.model;
  UnitedOptimizer opt(model, tc.learning_rate);
  UnitedGrads grads(model);
  ReplayBuffer buffer(tc.replay_capacity);
  Rng act_rng(derive_seed(tc.seed, 1));
  Rng batch_rng(derive_seed(tc.seed, 2));

  detail::RolloutContext ctx{net, sim_cfg, model.encoder, model.dqn, evaders, tc.epsilon, tc.gamma,
                             tc.include_adj, tc.per_step_transitions, tc.reward, hooks};

  for (int ep = 0; ep < tc.episodes; ++ep) {
    double l1 = 0.0, mi = 0.0, total = 0.0;
    int updates = 0;
    auto store = [&](Transition t) { buffer.push(std::move(t)); };
    auto after = [&](int stored) {
      if (stored == 0) return;
      auto batch = buffer.sample_batch(tc.batch_size, batch_rng);
      if (!batch) return;
      const auto items = prepare_batch(net, model, *batch, tc.gamma);
      if (tc.plain_dqn_reference) {
        const double loss = plain_dqn_step(model.encoder, model.dqn, opt.q, opt.encoder, opt.lr, items);
        l1 += loss;
        total += loss;
      } else {
        const BatchLossReport rep = united_step(model, opt, grads, items, tc.mi_weight);
        l1 += rep.l1;
        mi += rep.mi;
        total += rep.total;
      }
      ++updates;
      target_sync(model.dqn);
    };
    EpisodeMetrics m = detail::rollout(ctx, derive_seed(tc.seed, 1000 + static_cast<std::uint64_t>(ep)), act_rng,
                                       store, after);
    m.episode = ep;
    m.updates = updates;
    if (updates) {
      m.l1 = l1 / updates;
      m.mi = mi / updates;
      m.total_loss = total / updates;
    }
    out.metrics.push_back(std::move(m));
  }
  return out;
}

struct EvalSummary {
  std::size_t episodes = 0;
  double mean_return = 0.0;
  double best_return = 0.0;
  double mean_completion = 0.0;
  double best_completion = 0.0;
  double capture_rate = 0.0;
  std::vector<EpisodeMetrics> details;
};

/// Greedy rollouts, n_episodes per seed. Episodes are independent, so they
/// may run on `workers` threads without changing the result.
inline EvalSummary evaluate(const RoadNetwork& net, const SimConfig& sim_cfg, const UnitedModel& model,
                            const QTableSet& evaders, std::size_t n_episodes, const std::vector<std::uint64_t>& seeds,
                            bool include_adj = true, std::size_t workers = 1, const RewardConfig& reward = {},
                            double gamma = 0.95) {
  sim_cfg.validate();
  if (n_episodes == 0 || seeds.empty()) throw ConfigError("evaluation needs at least one episode and one seed");
  if (evaders.size() != static_cast<std::size_t>(sim_cfg.num_evaders)) {
    throw ConfigError("evader tables do not match num_evaders");
  }
  if (model.encoder.observation_dim() != observation_width(net, sim_cfg)) {
    throw ConfigError("checkpoint does not match the scene dimensions");
  }
  const std::size_t total = n_episodes * seeds.size();
  std::vector<EpisodeMetrics> details(total);
  detail::RolloutContext ctx{net, sim_cfg, model.encoder, model.dqn, evaders, 0.0, gamma, include_adj, false, reward,
                             nullptr};
  auto run = [&](std::size_t k) {
    const std::uint64_t seed = seeds[k / n_episodes];
    const std::uint64_t ep = k % n_episodes;
    Rng act_rng(derive_seed(seed, 21));
    details[k] = detail::rollout(ctx, derive_seed(seed, 5000 + ep), act_rng, nullptr, nullptr);
    details[k].episode = static_cast<int>(k);
  };
  workers = std::max<std::size_t>(1, std::min(workers, total));
  if (workers == 1) {
    for (std::size_t k = 0; k < total; ++k) run(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < total; k += workers) run(k);
      });
    }
    for (auto& t : pool) t.join();
  }

  EvalSummary s;
  s.episodes = total;
  s.best_return = details.front().undiscounted;
  s.best_completion = details.front().completion_step;
  std::size_t caught = 0;
  for (const auto& d : details) {
    s.mean_return += d.undiscounted;
    s.mean_completion += d.completion_step;
    s.best_return = std::max(s.best_return, d.undiscounted);
    s.best_completion = std::min<double>(s.best_completion, d.completion_step);
    caught += static_cast<std::size_t>(d.captures);
  }
  s.mean_return /= static_cast<double>(total);
  s.mean_completion /= static_cast<double>(total);
  s.capture_rate = static_cast<double>(caught) / static_cast<double>(total * static_cast<std::size_t>(sim_cfg.num_evaders));
  s.details = std::move(details);
  return s;
}

// ------------------------------------------------------------ metrics CSV

inline constexpr const char* kMetricsHeader = "episode,undiscounted,discounted,completion_step,captures,l1,mi,total_loss";

inline std::string format_metrics_csv(const std::vector<EpisodeMetrics>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[256];
  for (const auto& m : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%d,%d,%.17g,%.17g,%.17g\n", m.episode, m.undiscounted,
                  m.discounted, m.completion_step, m.captures, m.l1, m.mi, m.total_loss);
    out += buf;
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path);
  os << text;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------ checkpoints

struct Checkpoint {
  UnitedModel model;
  QTableSet evaders;
  std::string config_text;
};

inline void save_checkpoint(const std::string& dir, const UnitedModel& m, const QTableSet& evaders,
                            const std::string& config_text) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path p(dir);
  write_file_bytes((p / "encoder.bin").string(), save_encoder(m.encoder));
  write_file_bytes((p / "dqn.bin").string(), save_dqn(m.dqn));
  write_file_bytes((p / "critic.bin").string(), save_critic(m.critic));
  write_text_file((p / "qtables.txt").string(), save_qtables(evaders));
  write_text_file((p / "config.txt").string(), config_text);
}

inline Checkpoint load_checkpoint(const std::string& dir) {
  const std::filesystem::path p(dir);
  Checkpoint c;
  c.model.encoder = load_encoder(read_file_bytes((p / "encoder.bin").string()));
  c.model.dqn = load_dqn(read_file_bytes((p / "dqn.bin").string()));
  c.model.critic = load_critic(read_file_bytes((p / "critic.bin").string()));
  c.evaders = load_qtables(read_text_file((p / "qtables.txt").string()));
  c.config_text = read_text_file((p / "config.txt").string());
  if (c.model.dqn.online.input_dim() != c.model.encoder.observation_dim() + c.model.encoder.strategy_dim()) {
    throw FormatError("DQN input width does not match the encoder");
  }
  return c;
}

}  // namespace pursuit
