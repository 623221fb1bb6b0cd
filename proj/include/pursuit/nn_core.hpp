#pragma once

// Minimal dense MLP engine: forward, analytic backpropagation, ELU, Adam and
// a binary checkpoint format.
//
// Weights are stored input-major (row i holds the weights from input i to
// every output unit). Inputs to the first layer are consumed as sparse
// vectors, so one-hot heavy observations only pay for their nonzeros.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pursuit/bytes.hpp"
#include "pursuit/error.hpp"
#include "pursuit/rng.hpp"

namespace pursuit {

inline constexpr double kEluAlpha = 1.0;

inline double elu(double z) { return z > 0.0 ? z : kEluAlpha * (std::exp(z) - 1.0); }
inline double elu_derivative(double z) { return z > 0.0 ? 1.0 : kEluAlpha * std::exp(z); }

/// Sparse vector with strictly increasing indices.
struct SparseInput {
  std::size_t dim = 0;
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  void clear(std::size_t new_dim) {
    dim = new_dim;
    index.clear();
    value.clear();
  }

  void push(std::size_t i, double v) {
    if (v == 0.0) return;
    index.push_back(static_cast<std::uint32_t>(i));
    value.push_back(v);
  }

  static SparseInput from_dense(std::span<const double> x) {
    SparseInput s;
    s.dim = x.size();
    for (std::size_t i = 0; i < x.size(); ++i) s.push(i, x[i]);
    return s;
  }

  std::vector<double> to_dense() const {
    std::vector<double> out(dim, 0.0);
    for (std::size_t k = 0; k < index.size(); ++k) out[index[k]] = value[k];
    return out;
  }
};

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // in * out, input-major
  std::vector<double> bias;     // out

  double& w(std::size_t o, std::size_t i) { return weights[i * out + o]; }
  double w(std::size_t o, std::size_t i) const { return weights[i * out + o]; }

  bool operator==(const DenseLayer&) const = default;
};

/// ELU on every hidden layer, identity on the output layer.
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      for (double v : l.weights)
        if (!std::isfinite(v)) return false;
      for (double v : l.bias)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const MlpParams&) const = default;
};

/// Builds an MLP with layer widths `dims` (dims[0] is the input width).
/// Weights are uniform in +-sqrt(6 / (fan_in + fan_out)); biases are zero.
inline MlpParams make_mlp(const std::vector<std::size_t>& dims, Rng& rng) {
  if (dims.size() < 2) throw ConfigError("an MLP needs at least an input and an output width");
  MlpParams p;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    if (dims[k] == 0 || dims[k + 1] == 0) throw ConfigError("MLP layer widths must be positive");
    DenseLayer layer;
    layer.in = dims[k];
    layer.out = dims[k + 1];
    layer.weights.resize(layer.in * layer.out);
    layer.bias.assign(layer.out, 0.0);
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (auto& v : layer.weights) v = uniform_real(rng, -limit, limit);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

/// Activation cache recorded by forward and consumed by backward.
struct SharedInput;
struct MlpGrads;

struct Tape {
  SparseInput input;
  SharedInput* shared = nullptr;
  std::vector<std::vector<double>> pre;  // pre-activation per layer
  std::vector<std::vector<double>> act;  // output per layer; act.back() is y

  const std::vector<double>& output() const { return act.back(); }
};

namespace detail {

inline void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] += a * x[k];
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

}  // namespace detail

/// Inputs equal to 1 in every sample of a batch (the road topology block).
/// Their first-layer rows are summed once per batch instead of once per
/// sample, and the matching weight gradients are accumulated once.
struct SharedInput {
  std::vector<std::uint32_t> index;
  std::vector<double> contribution;  // sum of the first-layer rows in `index`
  std::vector<double> delta_sum;     // first-layer deltas of every sample using it

  SharedInput() = default;
  SharedInput(const MlpParams& p, std::vector<std::uint32_t> idx) : index(std::move(idx)) { refresh(p); }

  void refresh(const MlpParams& p) {
    const DenseLayer& l = p.layers.front();
    contribution.assign(l.out, 0.0);
    delta_sum.assign(l.out, 0.0);
    for (auto i : index) {
      if (i >= l.in) throw ContractError("shared input index out of range");
      detail::axpy(1.0, &l.weights[static_cast<std::size_t>(i) * l.out], contribution.data(), l.out);
    }
  }

  /// Moves the accumulated deltas into the weight gradient of every shared row.
  void flush(MlpGrads& g);
};

/// Runs the network on a sparse input, recording intermediates in `tape`.
/// With `shared`, the input is x plus ones at shared->index (which x must
/// not contain).
inline const std::vector<double>& forward(const MlpParams& p, const SparseInput& x, Tape& tape,
                                          SharedInput* shared = nullptr) {
  if (p.layers.empty()) throw ContractError("forward on an empty network");
  if (x.dim != p.input_dim()) {
    throw ContractError("input width " + std::to_string(x.dim) + " does not match network input " +
                        std::to_string(p.input_dim()));
  }
  const std::size_t n_layers = p.layers.size();
  tape.input = x;
  tape.shared = shared;
  tape.pre.resize(n_layers);
  tape.act.resize(n_layers);

  for (std::size_t l = 0; l < n_layers; ++l) {
    const DenseLayer& layer = p.layers[l];
    auto& z = tape.pre[l];
    z.assign(layer.bias.begin(), layer.bias.end());
    if (l == 0) {
      if (shared) detail::axpy(1.0, shared->contribution.data(), z.data(), layer.out);
      for (std::size_t k = 0; k < x.index.size(); ++k) {
        detail::axpy(x.value[k], &layer.weights[x.index[k] * layer.out], z.data(), layer.out);
      }
    } else {
      const auto& in = tape.act[l - 1];
      for (std::size_t i = 0; i < layer.in; ++i) {
        if (in[i] == 0.0) continue;
        detail::axpy(in[i], &layer.weights[i * layer.out], z.data(), layer.out);
      }
    }
    auto& a = tape.act[l];
    a.resize(layer.out);
    if (l + 1 == n_layers) {
      std::copy(z.begin(), z.end(), a.begin());
    } else {
      for (std::size_t o = 0; o < layer.out; ++o) a[o] = elu(z[o]);
    }
  }
  return tape.act.back();
}

struct ForwardResult {
  std::vector<double> y;
  Tape tape;
};

inline ForwardResult forward(const MlpParams& p, std::span<const double> x) {
  ForwardResult r;
  forward(p, SparseInput::from_dense(x), r.tape);
  r.y = r.tape.output();
  return r;
}

/// Gradient accumulator shaped like MlpParams. Rows of the first layer that
/// received a nonzero contribution are tracked so zeroing and Adam can skip
/// rows whose gradient has always been zero.
struct MlpGrads {
  std::vector<DenseLayer> layers;
  std::vector<std::uint32_t> touched_rows;
  std::vector<std::uint8_t> touched;
  bool all_rows_touched = false;

  explicit MlpGrads(const MlpParams& p) {
    for (const auto& l : p.layers) {
      DenseLayer g;
      g.in = l.in;
      g.out = l.out;
      g.weights.assign(l.weights.size(), 0.0);
      g.bias.assign(l.bias.size(), 0.0);
      layers.push_back(std::move(g));
    }
    touched.assign(p.input_dim(), 0);
  }

  void touch_row(std::uint32_t i) {
    if (!touched[i]) {
      touched[i] = 1;
      touched_rows.push_back(i);
    }
  }

  /// Marks every first-layer row as live; used when gradients are written
  /// directly rather than through accumulate_backward.
  void touch_all() { all_rows_touched = true; }

  void zero() {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& g = layers[l];
      std::fill(g.bias.begin(), g.bias.end(), 0.0);
      if (l == 0 && !all_rows_touched) {
        for (auto i : touched_rows) std::fill_n(&g.weights[i * g.out], g.out, 0.0);
      } else {
        std::fill(g.weights.begin(), g.weights.end(), 0.0);
      }
    }
    for (auto i : touched_rows) touched[i] = 0;
    touched_rows.clear();
    all_rows_touched = false;
  }

  double squared_norm() const {
    double s = 0.0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& g = layers[l];
      if (l == 0 && !all_rows_touched) {
        for (auto i : touched_rows) s += detail::dot(&g.weights[i * g.out], &g.weights[i * g.out], g.out);
      } else {
        for (double v : g.weights) s += v * v;
      }
      for (double v : g.bias) s += v * v;
    }
    return s;
  }

  double norm() const { return std::sqrt(squared_norm()); }
};

/// Adds d(grad_out . y)/d(params) into `grads`. When `grad_input` is
/// non-empty it receives d(grad_out . y)/dx for inputs
/// [input_begin, input_begin + grad_input.size()) (overwritten, not added).
inline void accumulate_backward(const MlpParams& p, const Tape& tape, std::span<const double> grad_out,
                                MlpGrads& grads, std::span<double> grad_input = {},
                                std::size_t input_begin = 0) {
  const std::size_t n_layers = p.layers.size();
  if (grad_out.size() != p.output_dim()) throw ContractError("grad_out width does not match network output");
  if (tape.act.size() != n_layers) throw ContractError("tape does not come from this network");
  if (input_begin + grad_input.size() > p.input_dim()) throw ContractError("input gradient range out of bounds");

  std::vector<double> delta(grad_out.begin(), grad_out.end());
  std::vector<double> upstream;
  for (std::size_t l = n_layers; l-- > 0;) {
    const DenseLayer& layer = p.layers[l];
    DenseLayer& g = grads.layers[l];
    if (l + 1 < n_layers) {
      const auto& z = tape.pre[l];
      for (std::size_t o = 0; o < layer.out; ++o) delta[o] *= elu_derivative(z[o]);
    }
    for (std::size_t o = 0; o < layer.out; ++o) g.bias[o] += delta[o];

    if (l == 0) {
      const auto& x = tape.input;
      if (tape.shared) detail::axpy(1.0, delta.data(), tape.shared->delta_sum.data(), layer.out);
      for (std::size_t k = 0; k < x.index.size(); ++k) {
        const std::uint32_t i = x.index[k];
        grads.touch_row(i);
        detail::axpy(x.value[k], delta.data(), &g.weights[i * layer.out], layer.out);
      }
      for (std::size_t k = 0; k < grad_input.size(); ++k) {
        grad_input[k] = detail::dot(&layer.weights[(input_begin + k) * layer.out], delta.data(), layer.out);
      }
    } else {
      const auto& in = tape.act[l - 1];
      upstream.assign(layer.in, 0.0);
      for (std::size_t i = 0; i < layer.in; ++i) {
        if (in[i] != 0.0) detail::axpy(in[i], delta.data(), &g.weights[i * layer.out], layer.out);
        upstream[i] = detail::dot(&layer.weights[i * layer.out], delta.data(), layer.out);
      }
      delta.swap(upstream);
    }
  }
}

inline void SharedInput::flush(MlpGrads& g) {
  DenseLayer& l = g.layers.front();
  for (auto i : index) {
    g.touch_row(i);
    detail::axpy(1.0, delta_sum.data(), &l.weights[static_cast<std::size_t>(i) * l.out], l.out);
  }
  std::fill(delta_sum.begin(), delta_sum.end(), 0.0);
}

struct BackwardResult {
  MlpGrads grads;
  std::vector<double> grad_input;
};

inline BackwardResult backward(const MlpParams& p, const Tape& tape, std::span<const double> grad_out) {
  BackwardResult r{MlpGrads(p), std::vector<double>(p.input_dim(), 0.0)};
  accumulate_backward(p, tape, grad_out, r.grads, r.grad_input, 0);
  return r;
}

struct AdamState {
  std::vector<std::vector<double>> m_w, v_w, m_b, v_b;
  std::vector<std::uint8_t> active;  // first-layer rows that ever had a nonzero gradient
  std::vector<std::uint32_t> active_rows;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  explicit AdamState(const MlpParams& p) {
    for (const auto& l : p.layers) {
      m_w.emplace_back(l.weights.size(), 0.0);
      v_w.emplace_back(l.weights.size(), 0.0);
      m_b.emplace_back(l.bias.size(), 0.0);
      v_b.emplace_back(l.bias.size(), 0.0);
    }
    active.assign(p.input_dim(), 0);
  }
};

namespace detail {

inline void adam_span(double* p, double* m, double* v, const double* g, std::size_t n, double b1, double b2,
                      double c1, double c2, double lr, double eps) {
  for (std::size_t k = 0; k < n; ++k) {
    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
    const double m_hat = m[k] / c1;
    const double v_hat = v[k] / c2;
    p[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

}  // namespace detail

/// Standard Adam with bias correction. First-layer rows whose gradient has
/// been zero at every step so far have zero moments, so their exact update
/// is zero and they are skipped.
inline void adam_step(MlpParams& p, AdamState& s, const MlpGrads& grads, double lr) {
  if (grads.layers.size() != p.layers.size() || s.m_w.size() != p.layers.size()) {
    throw ContractError("Adam state, gradients and parameters differ in shape");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));

  auto activate = [&s](std::uint32_t i) {
    if (!s.active[i]) {
      s.active[i] = 1;
      s.active_rows.push_back(i);
    }
  };
  if (grads.all_rows_touched) {
    for (std::uint32_t i = 0; i < s.active.size(); ++i) activate(i);
  } else {
    for (auto i : grads.touched_rows) activate(i);
  }

  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    DenseLayer& layer = p.layers[l];
    const DenseLayer& g = grads.layers[l];
    if (g.weights.size() != layer.weights.size()) throw ContractError("gradient shape mismatch");
    if (l == 0) {
      for (auto i : s.active_rows) {
        const std::size_t off = static_cast<std::size_t>(i) * layer.out;
        detail::adam_span(&layer.weights[off], &s.m_w[l][off], &s.v_w[l][off], &g.weights[off], layer.out, s.beta1,
                          s.beta2, c1, c2, lr, s.epsilon);
      }
    } else {
      detail::adam_span(layer.weights.data(), s.m_w[l].data(), s.v_w[l].data(), g.weights.data(),
                        layer.weights.size(), s.beta1, s.beta2, c1, c2, lr, s.epsilon);
    }
    detail::adam_span(layer.bias.data(), s.m_b[l].data(), s.v_b[l].data(), g.bias.data(), layer.bias.size(),
                      s.beta1, s.beta2, c1, c2, lr, s.epsilon);
  }
}

// Checkpoint layout: "PMLP", u64 layer count, then per layer u64 in, u64 out,
// in*out f64 weights (input-major), out f64 biases. All little-endian.
inline constexpr std::string_view kMlpMagic = "PMLP";

inline void write_mlp(ByteWriter& w, const MlpParams& p) {
  w.tag(kMlpMagic);
  w.u64(p.layers.size());
  for (const auto& l : p.layers) {
    w.u64(l.in);
    w.u64(l.out);
    w.f64s(l.weights);
    w.f64s(l.bias);
  }
}

inline MlpParams read_mlp(ByteReader& r) {
  r.expect_tag(kMlpMagic);
  const std::uint64_t n = r.u64();
  if (n == 0 || n > 64) throw FormatError("implausible layer count");
  MlpParams p;
  std::size_t prev_out = 0;
  for (std::uint64_t k = 0; k < n; ++k) {
    DenseLayer l;
    l.in = r.u64();
    l.out = r.u64();
    if (l.in == 0 || l.out == 0 || l.in > (1u << 26) || l.out > (1u << 26)) throw FormatError("implausible layer dims");
    if (k > 0 && l.in != prev_out) throw FormatError("layer dims do not chain");
    if (r.remaining() / 8 < l.in * l.out + l.out) throw FormatError("truncated stream");
    r.f64s(l.weights, l.in * l.out);
    r.f64s(l.bias, l.out);
    prev_out = l.out;
    p.layers.push_back(std::move(l));
  }
  return p;
}

inline std::vector<std::uint8_t> save(const MlpParams& p) {
  ByteWriter w;
  write_mlp(w, p);
  return w.release();
}

inline MlpParams load(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  MlpParams p = read_mlp(r);
  if (!r.at_end()) throw FormatError("trailing bytes after network");
  return p;
}

}  // namespace pursuit
