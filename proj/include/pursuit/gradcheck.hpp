#pragma once

// Finite-difference checks of every analytic gradient path on small random
// instances.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pursuit/loss_core.hpp"
#include "pursuit/nn_core.hpp"
#include "pursuit/opponent_model.hpp"
#include "pursuit/pursuer_agent.hpp"
#include "pursuit/rng.hpp"

namespace pursuit {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kRelErrFloor = 1e-6;

/// |a - n| / max(|a|, |n|, floor): relative where the gradient is
/// appreciable, absolute (scaled by 1/floor) where both are tiny.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelErrFloor});
  return std::abs(analytic - numeric) / scale;
}

inline double central_difference(double& x, const std::function<double()>& f, double h = kFdStep) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

enum class GradFault { None, SignFlip };

struct GradcheckSuiteResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t checks = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

namespace detail {

inline std::vector<double*> parameter_pointers(MlpParams& p) {
  std::vector<double*> out;
  for (auto& l : p.layers) {
    for (double& w : l.weights) out.push_back(&w);
    for (double& b : l.bias) out.push_back(&b);
  }
  return out;
}

inline std::vector<const double*> gradient_pointers(const MlpGrads& g) {
  std::vector<const double*> out;
  for (const auto& l : g.layers) {
    for (const double& w : l.weights) out.push_back(&w);
    for (const double& b : l.bias) out.push_back(&b);
  }
  return out;
}

inline double fault(double g, GradFault f) { return f == GradFault::SignFlip ? -g : g; }

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double zero_fraction = 0.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform01(rng) < zero_fraction ? 0.0 : uniform_real(rng, -1.0, 1.0);
  return v;
}

/// Compares every analytic entry with a central difference of `loss`.
inline void compare(GradcheckSuiteResult& r, std::vector<double*> params, std::vector<double> analytic,
                    const std::function<double()>& loss, GradFault f) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double num = central_difference(*params[k], loss);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(fault(analytic[k], f), num));
    ++r.checks;
  }
}

inline std::vector<double> copy_grads(const MlpGrads& g) {
  std::vector<double> out;
  for (const double* p : gradient_pointers(g)) out.push_back(*p);
  return out;
}

}  // namespace detail

/// MLP parameters and inputs against loss = c . y.
inline GradcheckSuiteResult gradcheck_mlp(std::size_t instances, std::uint64_t seed, GradFault f = GradFault::None) {
  GradcheckSuiteResult r{"nn_core", instances, 0, 0.0, 1e-4, 0.0};
  Rng rng(seed);
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const std::size_t in = 3 + uniform_index(rng, 5), h1 = 3 + uniform_index(rng, 5), h2 = 2 + uniform_index(rng, 4),
                      out = 1 + uniform_index(rng, 3);
    MlpParams p = make_mlp({in, h1, h2, out}, rng);
    for (auto& l : p.layers)
      for (auto& b : l.bias) b = uniform_real(rng, -0.5, 0.5);
    std::vector<double> x = detail::random_vector(in, rng, 0.2);
    const std::vector<double> c = detail::random_vector(out, rng);
    auto loss = [&] {
      const auto y = forward(p, x).y;
      return detail::dot(c.data(), y.data(), out);
    };
    const auto fr = forward(p, x);
    const BackwardResult br = backward(p, fr.tape, c);
    MlpGrads g = br.grads;
    g.touch_all();
    detail::compare(r, detail::parameter_pointers(p), detail::copy_grads(g), loss, f);
    std::vector<double*> xs;
    for (auto& v : x) xs.push_back(&v);
    detail::compare(r, xs, br.grad_input, loss, f);
  }
  return r;
}

namespace detail {

struct TinyTdInstance {
  MlpParams q;
  std::vector<std::vector<double>> xs;  // last pi_dim entries play the strategy model
  std::vector<TurnAction> as;
  std::vector<double> ys;
  std::size_t pi_dim = 0;
};

inline TinyTdInstance tiny_td(Rng& rng) {
  TinyTdInstance t;
  const std::size_t op = 4 + uniform_index(rng, 4);
  t.pi_dim = 2 + uniform_index(rng, 3);
  t.q = make_mlp({op + t.pi_dim, 5, 4, kNumActions}, rng);
  const std::size_t B = 2 + uniform_index(rng, 4);
  for (std::size_t i = 0; i < B; ++i) {
    t.xs.push_back(random_vector(op + t.pi_dim, rng, 0.3));
    t.as.push_back(kTurnActions[uniform_index(rng, kNumActions)]);
    t.ys.push_back(uniform_real(rng, -2.0, 2.0));
  }
  return t;
}

inline std::vector<SparseInput> sparse_all(const std::vector<std::vector<double>>& xs) {
  std::vector<SparseInput> out;
  for (const auto& x : xs) out.push_back(SparseInput::from_dense(x));
  return out;
}

}  // namespace detail

/// TD loss against the online parameters and the strategy-model slice.
inline GradcheckSuiteResult gradcheck_td(std::size_t instances, std::uint64_t seed, GradFault f = GradFault::None) {
  GradcheckSuiteResult r{"td_loss", instances, 0, 0.0, 1e-4, 0.0};
  Rng rng(seed);
  for (std::size_t inst = 0; inst < instances; ++inst) {
    detail::TinyTdInstance t = detail::tiny_td(rng);
    const std::size_t pi_begin = t.xs.front().size() - t.pi_dim;
    auto loss = [&] { return td_loss(t.q, detail::sparse_all(t.xs), t.as, t.ys, nullptr).l1; };
    MlpGrads g(t.q);
    const TdLossResult res = td_loss(t.q, detail::sparse_all(t.xs), t.as, t.ys, &g, pi_begin, t.pi_dim);
    g.touch_all();
    detail::compare(r, detail::parameter_pointers(t.q), detail::copy_grads(g), loss, f);
    std::vector<double*> ps;
    std::vector<double> an;
    for (std::size_t i = 0; i < t.xs.size(); ++i) {
      for (std::size_t k = 0; k < t.pi_dim; ++k) {
        ps.push_back(&t.xs[i][pi_begin + k]);
        an.push_back(res.grad_pi[i][k]);
      }
    }
    // Zeros in the strategy slice are perturbed through the dense vector, so
    // rebuild the sparse view each evaluation (done inside `loss`).
    detail::compare(r, ps, an, loss, f);
  }
  return r;
}

/// Contrastive estimate against both critic towers and every pi_i.
inline GradcheckSuiteResult gradcheck_mi(std::size_t instances, std::uint64_t seed, GradFault f = GradFault::None) {
  GradcheckSuiteResult r{"mi_contrastive", instances, 0, 0.0, 1e-4, 0.0};
  Rng rng(seed);
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const std::size_t op_dim = 4 + uniform_index(rng, 4), pi_dim = 2 + uniform_index(rng, 3);
    MiCritic critic = make_critic(op_dim, pi_dim, rng, 5, 4);
    const std::size_t B = 2 + uniform_index(rng, 4);
    std::vector<std::vector<double>> ops, pis;
    for (std::size_t i = 0; i < B; ++i) {
      ops.push_back(detail::random_vector(op_dim, rng, 0.3));
      pis.push_back(detail::random_vector(pi_dim, rng));
    }
    auto loss = [&] { return mi_contrastive(critic, detail::sparse_all(ops), pis).estimate; };
    CriticGrads g(critic);
    const MiResult res = mi_contrastive(critic, detail::sparse_all(ops), pis, &g);
    g.op_net.touch_all();
    g.pi_net.touch_all();
    detail::compare(r, detail::parameter_pointers(critic.op_net), detail::copy_grads(g.op_net), loss, f);
    detail::compare(r, detail::parameter_pointers(critic.pi_net), detail::copy_grads(g.pi_net), loss, f);
    std::vector<double*> ps;
    std::vector<double> an;
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t k = 0; k < pi_dim; ++k) {
        ps.push_back(&pis[i][k]);
        an.push_back(res.grad_pi[i][k]);
      }
    }
    detail::compare(r, ps, an, loss, f);
  }
  return r;
}

namespace detail {

struct TinyUnited {
  UnitedModel model;
  std::vector<std::vector<double>> windows, ops_ego, ops_canon;
  std::vector<TurnAction> as;
  std::vector<double> ys;

  LearnBatch batch() const {
    LearnBatch lb;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      lb.items.push_back({SparseInput::from_dense(windows[i]), SparseInput::from_dense(ops_ego[i]),
                          SparseInput::from_dense(ops_canon[i]), as[i], ys[i]});
    }
    return lb;
  }
};

inline TinyUnited tiny_united(Rng& rng) {
  TinyUnited t;
  const std::size_t op = 4 + uniform_index(rng, 3), h = 2, d = 3;
  t.model.encoder = make_encoder(op, h, rng, {5, 4}, d);
  t.model.dqn = make_dqn(op + d, rng, {5}, 10);
  t.model.critic = make_critic(op, d, rng, 5, 4);
  const std::size_t B = 3 + uniform_index(rng, 3);
  for (std::size_t i = 0; i < B; ++i) {
    t.windows.push_back(random_vector(op * h, rng, 0.3));
    t.ops_ego.push_back(random_vector(op, rng, 0.3));
    t.ops_canon.push_back(random_vector(op, rng, 0.3));
    t.as.push_back(kTurnActions[uniform_index(rng, kNumActions)]);
    t.ys.push_back(uniform_real(rng, -2.0, 2.0));
  }
  return t;
}

}  // namespace detail

/// End to end: L = L1 - I against encoder, Q-network and critic parameters.
inline GradcheckSuiteResult gradcheck_united(std::size_t instances, std::uint64_t seed,
                                             GradFault f = GradFault::None) {
  GradcheckSuiteResult r{"united_loss", instances, 0, 0.0, 1e-3, 0.0};
  Rng rng(seed);
  for (std::size_t inst = 0; inst < instances; ++inst) {
    detail::TinyUnited t = detail::tiny_united(rng);
    const LearnBatch lb = t.batch();
    auto loss = [&] { return united_objective(t.model, lb, 1.0).total; };
    UnitedGrads g(t.model);
    united_objective(t.model, lb, 1.0, &g);
    g.encoder.touch_all();
    g.q.touch_all();
    g.critic.op_net.touch_all();
    g.critic.pi_net.touch_all();
    detail::compare(r, detail::parameter_pointers(t.model.encoder.mlp), detail::copy_grads(g.encoder), loss, f);
    detail::compare(r, detail::parameter_pointers(t.model.dqn.online), detail::copy_grads(g.q), loss, f);
    detail::compare(r, detail::parameter_pointers(t.model.critic.op_net), detail::copy_grads(g.critic.op_net), loss,
                    f);
    detail::compare(r, detail::parameter_pointers(t.model.critic.pi_net), detail::copy_grads(g.critic.pi_net), loss,
                    f);
  }
  return r;
}

inline std::vector<GradcheckSuiteResult> run_gradchecks(std::size_t instances = 20, std::uint64_t seed = 7,
                                                        GradFault f = GradFault::None) {
  using Clock = std::chrono::steady_clock;
  std::vector<GradcheckSuiteResult> out;
  auto timed = [&](auto fn, std::uint64_t stream) {
    const auto t0 = Clock::now();
    GradcheckSuiteResult r = fn(instances, derive_seed(seed, stream), f);
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    out.push_back(r);
  };
  timed(gradcheck_mlp, 1);
  timed(gradcheck_td, 2);
  timed(gradcheck_mi, 3);
  timed(gradcheck_united, 4);
  return out;
}

}  // namespace pursuit
