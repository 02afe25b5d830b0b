#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctlm/corpus.hpp"
#include "ctlm/model.hpp"

namespace ctlm {

enum class DecodeStrategy { kGreedy, kBeam, kTopK, kNucleus };

DecodeStrategy parse_decode_strategy(std::string_view name);
std::string_view to_string(DecodeStrategy strategy);

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::kGreedy;
  int beam_size = 5;
  int k = 50;
  double top_p = 0.9;
  int max_new_tokens = 100;
  int min_new_tokens = 0;
  int ngram_ban = 0;  // 0 disables banning
  std::uint64_t seed = 1;
  TokenId eos_id = Vocabulary::kEos;

  void validate(int vocab_size) const;
  nlohmann::json to_json() const;
  static DecodeConfig from_json(const nlohmann::json& j);
};

struct DecodeResult {
  std::vector<TokenId> ids;               // generated tokens, eos excluded
  std::vector<double> per_step_logprob;   // model log-prob of each generated token (and of eos if emitted)
  std::vector<std::string> diagnostics;
  bool stopped_on_eos = false;
};

/// Generates a continuation of `prefix`. Ties are broken toward the lowest token id.
DecodeResult decode(const ModelState& state, std::span<const TokenId> prefix, const DecodeConfig& config);

/// Smallest set of most probable tokens whose mass reaches p (ties toward lower ids), sorted by id.
std::vector<TokenId> nucleus_pool(std::span<const double> probs, double p);

/// The k most probable tokens (ties toward lower ids), sorted by id.
std::vector<TokenId> top_k_pool(std::span<const double> probs, int k);

/// Tokens that would complete an n-gram already present in `context`, sorted by id.
std::vector<TokenId> ngram_ban_mask(std::span<const TokenId> context, int n);

}  // namespace ctlm
