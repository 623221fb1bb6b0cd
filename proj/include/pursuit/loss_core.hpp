#pragma once

// Training objective: squared TD error on the Q-network, a contrastive
// (InfoNCE) estimate of the information the strategy model carries about the
// joint observation, and their difference. A plug-in histogram estimator is
// included as a validation oracle for discrete data.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "pursuit/bytes.hpp"
#include "pursuit/error.hpp"
#include "pursuit/nn_core.hpp"
#include "pursuit/opponent_model.hpp"
#include "pursuit/pursuer_agent.hpp"
#include "pursuit/rng.hpp"

namespace pursuit {

// ---------------------------------------------------------------- TD loss

struct TdLossResult {
  double l1 = 0.0;
  std::vector<double> q_taken;
  std::vector<std::vector<double>> grad_pi;  // dl1/dpi_i, empty when pi_dim == 0
};

/// l1 = mean_i (Q(x_i, a_i) - y_i)^2 with y treated as constant. Parameter
/// gradients are added to `grads` (if given); gradients on inputs
/// [pi_begin, pi_begin + pi_dim) of every x_i are returned. `shared` marks
/// inputs left out of every x_i that are 1 in all of them.
inline TdLossResult td_loss(const MlpParams& online, std::span<const SparseInput> xs,
                            std::span<const TurnAction> actions, std::span<const double> ys, MlpGrads* grads,
                            std::size_t pi_begin = 0, std::size_t pi_dim = 0, SharedInput* shared = nullptr) {
  const std::size_t B = xs.size();
  if (B == 0) throw ContractError("td_loss on an empty batch");
  if (actions.size() != B || ys.size() != B) throw ContractError("td_loss batch parts differ in length");
  TdLossResult res;
  res.q_taken.resize(B);
  if (pi_dim) res.grad_pi.assign(B, std::vector<double>(pi_dim, 0.0));
  std::optional<MlpGrads> local;
  if (!grads && pi_dim) local.emplace(online);
  MlpGrads* sink = grads ? grads : (local ? &*local : nullptr);
  Tape tape;
  std::vector<double> g(kNumActions);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& q = forward(online, xs[i], tape, shared);
    const std::size_t a = action_index(actions[i]);
    const double err = q[a] - ys[i];
    res.q_taken[i] = q[a];
    res.l1 += err * err;
    if (sink) {
      std::fill(g.begin(), g.end(), 0.0);
      g[a] = 2.0 * err / static_cast<double>(B);
      std::span<double> gp = pi_dim ? std::span<double>(res.grad_pi[i]) : std::span<double>{};
      accumulate_backward(online, tape, g, *sink, gp, pi_begin);
    }
  }
  res.l1 /= static_cast<double>(B);
  if (grads && shared) shared->flush(*grads);
  return res;
}

/// Convenience form on stored transitions: targets from the target network,
/// strategy models as stored in the states.
inline TdLossResult td_loss(const RoadNetwork& net, const DqnParams& p, std::span<const Transition* const> batch,
                            double gamma, MlpGrads* grads = nullptr) {
  std::vector<SparseInput> xs;
  std::vector<TurnAction> as;
  std::vector<double> ys;
  for (const Transition* t : batch) {
    xs.push_back(assemble(net, t->s));
    as.push_back(t->a);
    ys.push_back(q_target(net, p, *t, gamma));
  }
  const std::size_t pi_dim = batch.empty() ? 0 : batch.front()->s.pi_e.size();
  const std::size_t pi_begin = xs.empty() ? 0 : xs.front().dim - pi_dim;
  return td_loss(p.online, xs, as, ys, grads, pi_begin, pi_dim);
}

// ------------------------------------------------------ contrastive MI bound

/// Separable critic f(op, pi) = g(op) . h(pi).
struct MiCritic {
  MlpParams op_net;  // g
  MlpParams pi_net;  // h

  bool operator==(const MiCritic&) const = default;
};

inline MiCritic make_critic(std::size_t op_dim, std::size_t pi_dim, Rng& rng, std::size_t hidden = 64,
                            std::size_t proj = 32) {
  MiCritic c;
  c.op_net = make_mlp({op_dim, hidden, proj}, rng);
  c.pi_net = make_mlp({pi_dim, hidden, proj}, rng);
  return c;
}

struct CriticGrads {
  MlpGrads op_net;
  MlpGrads pi_net;

  explicit CriticGrads(const MiCritic& c) : op_net(c.op_net), pi_net(c.pi_net) {}
  void zero() {
    op_net.zero();
    pi_net.zero();
  }
  double squared_norm() const { return op_net.squared_norm() + pi_net.squared_norm(); }
};

struct MiResult {
  double estimate = 0.0;
  std::vector<std::vector<double>> grad_pi;  // d(scale * estimate)/dpi_i
};

/// mean_i [ f_ii - log((1/B) sum_j exp f_ij) ], which never exceeds log B.
/// When `grads` is given, gradients of scale * estimate are added to it and
/// returned for every pi_i.
inline MiResult mi_contrastive(const MiCritic& critic, std::span<const SparseInput> ops,
                               std::span<const std::vector<double>> pis, CriticGrads* grads = nullptr,
                               double scale = 1.0, SharedInput* op_shared = nullptr) {
  const std::size_t B = ops.size();
  if (B < 2) throw ContractError("contrastive estimate needs a batch of at least 2");
  if (pis.size() != B) throw ContractError("op and pi batches differ in length");

  std::vector<Tape> g_tapes(B), h_tapes(B);
  std::vector<std::vector<double>> G(B), H(B);
  for (std::size_t i = 0; i < B; ++i) {
    G[i] = forward(critic.op_net, ops[i], g_tapes[i], op_shared);
    H[i] = forward(critic.pi_net, SparseInput::from_dense(pis[i]), h_tapes[i]);
  }
  const std::size_t P = critic.op_net.output_dim();
  if (critic.pi_net.output_dim() != P) throw ContractError("critic projections differ in width");

  std::vector<double> f(B * B);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) f[i * B + j] = detail::dot(G[i].data(), H[j].data(), P);

  MiResult res;
  const double log_b = std::log(static_cast<double>(B));
  std::vector<double> soft(B * B);
  double sum = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const double mx = *std::max_element(&f[i * B], &f[i * B] + B);
    double z = 0.0;
    for (std::size_t j = 0; j < B; ++j) z += std::exp(f[i * B + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < B; ++j) soft[i * B + j] = std::exp(f[i * B + j] - lse);
    sum += f[i * B + i] - lse + log_b;
  }
  res.estimate = sum / static_cast<double>(B);
  if (!grads) return res;

  // d estimate / d f_ij = (delta_ij - softmax_ij) / B
  std::vector<std::vector<double>> dG(B, std::vector<double>(P, 0.0)), dH(B, std::vector<double>(P, 0.0));
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      const double d = scale * ((i == j ? 1.0 : 0.0) - soft[i * B + j]) / static_cast<double>(B);
      detail::axpy(d, H[j].data(), dG[i].data(), P);
      detail::axpy(d, G[i].data(), dH[j].data(), P);
    }
  }
  res.grad_pi.assign(B, std::vector<double>(critic.pi_net.input_dim(), 0.0));
  for (std::size_t i = 0; i < B; ++i) {
    accumulate_backward(critic.op_net, g_tapes[i], dG[i], grads->op_net);
    accumulate_backward(critic.pi_net, h_tapes[i], dH[i], grads->pi_net, res.grad_pi[i], 0);
  }
  if (op_shared) op_shared->flush(grads->op_net);
  return res;
}

// ------------------------------------------------------- plug-in MI oracle

/// Plug-in mutual information (nats) of integer-labelled pairs from their
/// empirical joint histogram.
inline double mi_binned(std::span<const std::pair<int, int>> samples) {
  if (samples.empty()) throw ContractError("mi_binned needs at least one sample");
  std::map<std::pair<int, int>, std::uint64_t> joint;
  std::map<int, std::uint64_t> px, py;
  for (const auto& s : samples) {
    ++joint[s];
    ++px[s.first];
    ++py[s.second];
  }
  const double n = static_cast<double>(samples.size());
  double mi = 0.0;
  for (const auto& [xy, c] : joint) {
    // p(x,y) / (p(x) p(y)) = c * n / (cx * cy), exact in integers when possible
    const double cx = static_cast<double>(px[xy.first]);
    const double cy = static_cast<double>(py[xy.second]);
    const double num = static_cast<double>(c) * n;
    const double den = cx * cy;
    if (num == den) continue;
    mi += (static_cast<double>(c) / n) * std::log(num / den);
  }
  return mi;
}

/// Same estimator on real-valued pairs after equal-width binning of each
/// coordinate over its observed range.
inline double mi_binned(std::span<const std::pair<double, double>> samples, std::size_t bins) {
  if (samples.empty()) throw ContractError("mi_binned needs at least one sample");
  if (bins == 0) throw ContractError("mi_binned needs at least one bin");
  auto range = [&](auto proj) {
    double lo = proj(samples.front()), hi = lo;
    for (const auto& s : samples) {
      lo = std::min(lo, proj(s));
      hi = std::max(hi, proj(s));
    }
    return std::make_pair(lo, hi);
  };
  const auto [xlo, xhi] = range([](const auto& s) { return s.first; });
  const auto [ylo, yhi] = range([](const auto& s) { return s.second; });
  auto bin = [bins](double v, double lo, double hi) {
    if (hi <= lo) return 0;
    const auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    return static_cast<int>(std::min(b, bins - 1));
  };
  std::vector<std::pair<int, int>> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.emplace_back(bin(s.first, xlo, xhi), bin(s.second, ylo, yhi));
  return mi_binned(std::span<const std::pair<int, int>>(labels));
}

// ----------------------------------------------------------- united loss

struct BatchLossReport {
  double l1 = 0.0;
  double mi = 0.0;
  double total = 0.0;
  double grad_norm_q = 0.0;
  double grad_norm_encoder = 0.0;
  double grad_norm_critic = 0.0;
};

/// total = l1 - w * mi. With w = 1 this is l1 - mi exactly.
inline BatchLossReport united_loss(double l1, double mi, double mi_weight = 1.0) {
  BatchLossReport r;
  r.l1 = l1;
  r.mi = mi;
  r.total = mi_weight == 1.0 ? l1 - mi : l1 - mi_weight * mi;
  return r;
}

/// Everything a single united update touches.
struct UnitedModel {
  EncoderParams encoder;
  DqnParams dqn;
  MiCritic critic;

  bool operator==(const UnitedModel&) const = default;
};

struct UnitedGrads {
  MlpGrads q;
  MlpGrads encoder;
  CriticGrads critic;

  explicit UnitedGrads(const UnitedModel& m) : q(m.dqn.online), encoder(m.encoder.mlp), critic(m.critic) {}
  void zero() {
    q.zero();
    encoder.zero();
    critic.zero();
  }
};

/// One prepared batch element. The encoder input is the history window of
/// s; the Q-network sees [op_ego, pi]; the critic sees op_canon; y is the
/// already computed TD target.
struct LearnItem {
  SparseInput window;
  SparseInput op_ego;
  SparseInput op_canon;
  TurnAction action = TurnAction::Straight;
  double y = 0.0;
};

/// Items plus the inputs every item shares (left out of the items): the
/// topology block at each window slot and in the single observation.
struct LearnBatch {
  std::vector<LearnItem> items;
  std::vector<std::uint32_t> window_shared;
  std::vector<std::uint32_t> op_shared;
};

namespace detail {

inline std::optional<SharedInput> shared_for(const MlpParams& p, const std::vector<std::uint32_t>& idx) {
  if (idx.empty()) return std::nullopt;
  return SharedInput(p, idx);
}

inline SharedInput* ptr(std::optional<SharedInput>& s) { return s ? &*s : nullptr; }

}  // namespace detail

inline SparseInput with_strategy(const SparseInput& op, std::span<const double> pi) {
  SparseInput x = op;
  x.dim += pi.size();
  for (std::size_t k = 0; k < pi.size(); ++k) x.push(op.dim + k, pi[k]);
  return x;
}

/// L = L1 - w * I over one batch; pi is produced by the encoder so both
/// terms backpropagate into it. The critic is skipped entirely when w == 0.
inline BatchLossReport united_objective(const UnitedModel& m, const LearnBatch& lb, double mi_weight,
                                        UnitedGrads* grads = nullptr) {
  const std::vector<LearnItem>& batch = lb.items;
  const std::size_t B = batch.size();
  if (B == 0) throw ContractError("united loss on an empty batch");
  const std::size_t d = m.encoder.strategy_dim();
  auto enc_shared = detail::shared_for(m.encoder.mlp, lb.window_shared);
  auto q_shared = detail::shared_for(m.dqn.online, lb.op_shared);

  std::vector<Tape> enc_tapes(B);
  std::vector<std::vector<double>> pis(B);
  std::vector<SparseInput> xs(B);
  std::vector<TurnAction> as(B);
  std::vector<double> ys(B);
  for (std::size_t i = 0; i < B; ++i) {
    pis[i] = forward(m.encoder.mlp, batch[i].window, enc_tapes[i], detail::ptr(enc_shared));
    xs[i] = with_strategy(batch[i].op_ego, pis[i]);
    as[i] = batch[i].action;
    ys[i] = batch[i].y;
  }
  const std::size_t pi_begin = batch.front().op_ego.dim;
  const TdLossResult td = td_loss(m.dqn.online, xs, as, ys, grads ? &grads->q : nullptr, pi_begin, grads ? d : 0,
                                  detail::ptr(q_shared));

  double mi = 0.0;
  MiResult mres;
  if (mi_weight != 0.0) {
    std::vector<SparseInput> ops(B);
    for (std::size_t i = 0; i < B; ++i) ops[i] = batch[i].op_canon;
    auto critic_shared = detail::shared_for(m.critic.op_net, lb.op_shared);
    mres = mi_contrastive(m.critic, ops, pis, grads ? &grads->critic : nullptr, -mi_weight,
                          detail::ptr(critic_shared));
    mi = mres.estimate;
  }

  BatchLossReport rep = united_loss(td.l1, mi, mi_weight);
  if (grads) {
    std::vector<double> g(d);
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t k = 0; k < d; ++k) g[k] = td.grad_pi[i][k] + (mres.grad_pi.empty() ? 0.0 : mres.grad_pi[i][k]);
      accumulate_backward(m.encoder.mlp, enc_tapes[i], g, grads->encoder);
    }
    if (enc_shared) enc_shared->flush(grads->encoder);
    rep.grad_norm_q = grads->q.norm();
    rep.grad_norm_encoder = grads->encoder.norm();
    rep.grad_norm_critic = std::sqrt(grads->critic.squared_norm());
  }
  return rep;
}

struct UnitedOptimizer {
  AdamState q;
  AdamState encoder;
  AdamState critic_op;
  AdamState critic_pi;
  double lr = 1e-3;

  UnitedOptimizer(const UnitedModel& m, double learning_rate)
      : q(m.dqn.online), encoder(m.encoder.mlp), critic_op(m.critic.op_net), critic_pi(m.critic.pi_net),
        lr(learning_rate) {}
};

/// Zeroes the gradients, evaluates the united objective and takes one joint
/// Adam step on the Q-network, encoder and (when w != 0) critic.
inline BatchLossReport united_step(UnitedModel& m, UnitedOptimizer& opt, UnitedGrads& grads,
                                   const LearnBatch& batch, double mi_weight) {
  grads.zero();
  const BatchLossReport rep = united_objective(m, batch, mi_weight, &grads);
  adam_step(m.dqn.online, opt.q, grads.q, opt.lr);
  adam_step(m.encoder.mlp, opt.encoder, grads.encoder, opt.lr);
  if (mi_weight != 0.0) {
    adam_step(m.critic.op_net, opt.critic_op, grads.critic.op_net, opt.lr);
    adam_step(m.critic.pi_net, opt.critic_pi, grads.critic.pi_net, opt.lr);
  }
  return rep;
}

/// Reference DQN update without any information term: TD loss on [op, pi]
/// with the TD gradient flowing back into the encoder. Written separately
/// from united_objective so the two can be compared.
inline double plain_dqn_step(EncoderParams& enc, DqnParams& dqn, AdamState& q_opt, AdamState& enc_opt, double lr,
                             const LearnBatch& lb) {
  MlpGrads gq(dqn.online), ge(enc.mlp);
  const std::vector<LearnItem>& batch = lb.items;
  const std::size_t B = batch.size();
  if (B == 0) throw ContractError("DQN step on an empty batch");
  auto enc_shared = detail::shared_for(enc.mlp, lb.window_shared);
  auto q_shared = detail::shared_for(dqn.online, lb.op_shared);
  std::vector<Tape> tapes(B);
  std::vector<SparseInput> xs;
  std::vector<TurnAction> as;
  std::vector<double> ys;
  for (std::size_t i = 0; i < B; ++i) {
    const StrategyModel pi = forward(enc.mlp, batch[i].window, tapes[i], detail::ptr(enc_shared));
    xs.push_back(with_strategy(batch[i].op_ego, pi));
    as.push_back(batch[i].action);
    ys.push_back(batch[i].y);
  }
  const std::size_t d = enc.strategy_dim();
  const TdLossResult td = td_loss(dqn.online, xs, as, ys, &gq, batch.front().op_ego.dim, d, detail::ptr(q_shared));
  for (std::size_t i = 0; i < B; ++i) accumulate_backward(enc.mlp, tapes[i], td.grad_pi[i], ge);
  if (enc_shared) enc_shared->flush(ge);
  adam_step(dqn.online, q_opt, gq, lr);
  adam_step(enc.mlp, enc_opt, ge, lr);
  return td.l1;
}

inline constexpr std::string_view kCriticMagic = "PCRT";

inline std::vector<std::uint8_t> save_critic(const MiCritic& c) {
  ByteWriter w;
  w.tag(kCriticMagic);
  write_mlp(w, c.op_net);
  write_mlp(w, c.pi_net);
  return w.release();
}

inline MiCritic load_critic(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_tag(kCriticMagic);
  MiCritic c;
  c.op_net = read_mlp(r);
  c.pi_net = read_mlp(r);
  if (!r.at_end()) throw FormatError("trailing bytes after critic");
  if (c.op_net.output_dim() != c.pi_net.output_dim()) throw FormatError("critic projections differ in width");
  return c;
}

}  // namespace pursuit
