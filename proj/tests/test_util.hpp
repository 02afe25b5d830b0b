#pragma once

#include <random>
#include <vector>

#include "ctlm/model.hpp"

namespace ctlm::testing {

inline ModelConfig small_config(int vocab = 11, int max_positions = 64) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_positions = max_positions;
  c.seed = 7;
  return c;
}

/// Random model with weights large enough to give peaked, input-dependent distributions.
inline ModelState peaked_model(int vocab = 11, std::uint64_t seed = 7, int max_positions = 64) {
  ModelConfig c = small_config(vocab, max_positions);
  c.seed = seed;
  ModelState s(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 0.4f);
  for (auto& p : s.parameters()) p += n(rng);
  return s;
}

/// A model whose next-token logits are `logits` regardless of context: every
/// embedding is zero except output rows, so the final layer norm emits its bias.
inline ModelState constant_model(const std::vector<float>& logits, int max_positions = 64) {
  ModelConfig c = small_config(static_cast<int>(logits.size()), max_positions);
  ModelState s(c, ModelState::Init::kZero);
  auto wte = s.tensor("wte");
  auto bias = s.tensor("lnf.b");
  bias(0, 0) = 1.0f;
  for (std::size_t v = 0; v < logits.size(); ++v) wte(static_cast<Eigen::Index>(v), 0) = logits[v];
  return s;
}

inline std::vector<TokenId> random_ids(std::mt19937_64& rng, int len, int lo, int hi) {
  std::uniform_int_distribution<int> id(lo, hi);
  std::vector<TokenId> out(static_cast<std::size_t>(len));
  for (auto& t : out) t = id(rng);
  return out;
}

}  // namespace ctlm::testing
