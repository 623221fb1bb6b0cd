#pragma once

// Opponents' joint strategy model: an MLP over the concatenated h-step
// history of joint pursuer observations.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pursuit/bytes.hpp"
#include "pursuit/error.hpp"
#include "pursuit/nn_core.hpp"
#include "pursuit/rng.hpp"

namespace pursuit {

inline constexpr std::size_t kStrategyDim = 64;

using StrategyModel = std::vector<double>;

struct EncoderParams {
  MlpParams mlp;
  std::size_t history = 3;

  std::size_t input_dim() const { return mlp.input_dim(); }
  std::size_t strategy_dim() const { return mlp.output_dim(); }
  std::size_t observation_dim() const { return mlp.input_dim() / history; }

  bool operator==(const EncoderParams&) const = default;
};

inline EncoderParams make_encoder(std::size_t observation_dim, std::size_t history, Rng& rng,
                                  const std::vector<std::size_t>& hidden = {128, 128, 128},
                                  std::size_t strategy_dim = kStrategyDim) {
  if (history == 0) throw ConfigError("history length must be >= 1");
  if (observation_dim == 0 || strategy_dim == 0) throw ConfigError("encoder widths must be positive");
  std::vector<std::size_t> dims{observation_dim * history};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(strategy_dim);
  return EncoderParams{make_mlp(dims, rng), history};
}

/// Forward pass over a window; the tape is kept for backpropagation.
inline StrategyModel encode(const EncoderParams& enc, const SparseInput& window, Tape& tape) {
  return forward(enc.mlp, window, tape);
}

inline StrategyModel encode(const EncoderParams& enc, std::span<const double> window) {
  if (window.size() != enc.input_dim()) {
    throw ContractError("window width " + std::to_string(window.size()) + " does not match encoder input " +
                        std::to_string(enc.input_dim()));
  }
  return forward(enc.mlp, window).y;
}

inline StrategyModel init_strategy(std::size_t strategy_dim = kStrategyDim) {
  return StrategyModel(strategy_dim, 0.0);
}

inline constexpr std::string_view kEncoderMagic = "PENC";

inline std::vector<std::uint8_t> save_encoder(const EncoderParams& enc) {
  ByteWriter w;
  w.tag(kEncoderMagic);
  w.u64(enc.history);
  write_mlp(w, enc.mlp);
  return w.release();
}

inline EncoderParams load_encoder(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_tag(kEncoderMagic);
  EncoderParams enc;
  enc.history = r.u64();
  enc.mlp = read_mlp(r);
  if (!r.at_end()) throw FormatError("trailing bytes after encoder");
  if (enc.history == 0 || enc.mlp.input_dim() % enc.history != 0) {
    throw FormatError("encoder input width is not a multiple of the history length");
  }
  return enc;
}

}  // namespace pursuit
