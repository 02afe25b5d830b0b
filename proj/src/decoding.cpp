#include "ctlm/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "ctlm/error.hpp"

namespace ctlm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<double> log_softmax(const std::vector<float>& logits) {
  double m = kNegInf;
  for (float z : logits) m = std::max(m, static_cast<double>(z));
  double s = 0.0;
  for (float z : logits) s += std::exp(static_cast<double>(z) - m);
  const double lse = m + std::log(s);
  std::vector<double> out(logits.size());
  for (std::size_t v = 0; v < logits.size(); ++v) out[v] = static_cast<double>(logits[v]) - lse;
  return out;
}

/// Descending probability, ascending id.
std::vector<TokenId> ranked(std::span<const double> probs) {
  std::vector<TokenId> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  return order;
}

struct StepDistribution {
  std::vector<double> logp;    // raw model log-probabilities
  std::vector<double> masked;  // logp with banned / forbidden tokens at -inf
  bool all_banned = false;
};

StepDistribution step_distribution(const std::vector<float>& logits, std::span<const TokenId> context,
                                   int generated, const DecodeConfig& config) {
  StepDistribution d;
  d.logp = log_softmax(logits);
  d.masked = d.logp;
  if (config.ngram_ban > 0) {
    for (TokenId v : ngram_ban_mask(context, config.ngram_ban)) d.masked[static_cast<std::size_t>(v)] = kNegInf;
  }
  if (generated < config.min_new_tokens && config.eos_id >= 0 &&
      static_cast<std::size_t>(config.eos_id) < d.masked.size()) {
    d.masked[static_cast<std::size_t>(config.eos_id)] = kNegInf;
  }
  d.all_banned = std::all_of(d.masked.begin(), d.masked.end(), [](double x) { return x == kNegInf; });
  return d;
}

TokenId argmax(const std::vector<double>& values) {
  return static_cast<TokenId>(std::max_element(values.begin(), values.end()) - values.begin());
}

/// Raw argmax, still honouring the minimum-length eos rule when another token exists.
TokenId fallback_token(const StepDistribution& d, int generated, const DecodeConfig& config) {
  std::vector<double> raw = d.logp;
  if (generated < config.min_new_tokens && config.eos_id >= 0 &&
      static_cast<std::size_t>(config.eos_id) < raw.size() && raw.size() > 1) {
    raw[static_cast<std::size_t>(config.eos_id)] = kNegInf;
  }
  return argmax(raw);
}

std::string banned_diagnostic(int step) {
  return "step " + std::to_string(step) + ": every token banned, fell back to the raw argmax";
}

TokenId sample(const StepDistribution& d, const DecodeConfig& config, std::mt19937_64& rng) {
  std::vector<double> probs(d.masked.size());
  double total = 0.0;
  for (std::size_t v = 0; v < probs.size(); ++v) total += probs[v] = std::exp(d.masked[v]);
  for (auto& p : probs) p /= total;
  const std::vector<TokenId> pool = config.strategy == DecodeStrategy::kTopK
                                        ? top_k_pool(probs, config.k)
                                        : nucleus_pool(probs, config.top_p);
  // Visit the pool in rank order so the draw does not depend on id order among equal masses.
  std::vector<TokenId> order;
  for (TokenId v : pool) {
    if (probs[static_cast<std::size_t>(v)] > 0.0) order.push_back(v);
  }
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  double mass = 0.0;
  for (TokenId v : order) mass += probs[static_cast<std::size_t>(v)];
  const double u = uniform01(rng) * mass;
  double acc = 0.0;
  for (TokenId v : order) {
    acc += probs[static_cast<std::size_t>(v)];
    if (u < acc) return v;
  }
  return order.back();
}

void check_prefix(const ModelState& state, std::span<const TokenId> prefix, const DecodeConfig& config) {
  if (prefix.empty()) throw InputError("decode needs a non-empty prefix");
  const auto& mc = state.config();
  config.validate(mc.vocab_size);
  if (static_cast<long>(prefix.size()) + config.max_new_tokens > mc.max_positions) {
    throw RangeError("prefix (" + std::to_string(prefix.size()) + ") + max_new_tokens (" +
                     std::to_string(config.max_new_tokens) + ") exceeds max_positions " +
                     std::to_string(mc.max_positions));
  }
}

std::vector<float> feed(const ModelState& state, DecoderCache& cache, std::span<const TokenId> ids) {
  std::vector<float> logits;
  for (TokenId id : ids) logits = decode_step(state, cache, id);
  return logits;
}

DecodeResult decode_single(const ModelState& state, std::span<const TokenId> prefix, const DecodeConfig& config) {
  DecodeResult r;
  std::mt19937_64 rng(config.seed);
  DecoderCache cache;
  std::vector<TokenId> context(prefix.begin(), prefix.end());
  std::vector<float> logits = feed(state, cache, prefix);
  for (int step = 0; step < config.max_new_tokens; ++step) {
    const StepDistribution d = step_distribution(logits, context, step, config);
    TokenId next;
    if (d.all_banned) {
      next = fallback_token(d, step, config);
      r.diagnostics.push_back(banned_diagnostic(step));
    } else if (config.strategy == DecodeStrategy::kGreedy) {
      next = argmax(d.masked);
    } else {
      next = sample(d, config, rng);
    }
    r.per_step_logprob.push_back(d.logp[static_cast<std::size_t>(next)]);
    if (next == config.eos_id) {
      r.stopped_on_eos = true;
      break;
    }
    r.ids.push_back(next);
    context.push_back(next);
    if (step + 1 < config.max_new_tokens) logits = decode_step(state, cache, next);
  }
  return r;
}

struct Hypothesis {
  std::vector<TokenId> tokens;  // generated so far
  std::vector<double> logprobs;
  double score = 0.0;
  DecoderCache cache;
  std::vector<float> logits;  // next-token logits
  bool eos = false;
};

struct Candidate {
  std::size_t hyp;
  TokenId token;
  double logprob;
  double score;
};

DecodeResult decode_beam(const ModelState& state, std::span<const TokenId> prefix, const DecodeConfig& config) {
  const auto width = static_cast<std::size_t>(config.beam_size);
  std::vector<std::string> diagnostics;
  std::vector<Hypothesis> live(1);
  live[0].logits = feed(state, live[0].cache, prefix);
  std::vector<Hypothesis> finished;

  for (int step = 0; step < config.max_new_tokens && !live.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      std::vector<TokenId> context(prefix.begin(), prefix.end());
      context.insert(context.end(), live[h].tokens.begin(), live[h].tokens.end());
      const StepDistribution d = step_distribution(live[h].logits, context, step, config);
      if (d.all_banned) {
        const TokenId t = fallback_token(d, step, config);
        diagnostics.push_back(banned_diagnostic(step) + " (beam " + std::to_string(h) + ")");
        candidates.push_back({h, t, d.logp[static_cast<std::size_t>(t)], live[h].score + d.logp[static_cast<std::size_t>(t)]});
        continue;
      }
      const auto order = ranked(d.masked);
      for (std::size_t i = 0; i < std::min(width, order.size()); ++i) {
        const auto t = order[i];
        const double lp = d.masked[static_cast<std::size_t>(t)];
        if (lp == kNegInf) break;
        candidates.push_back({h, t, lp, live[h].score + lp});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.hyp != b.hyp) return a.hyp < b.hyp;
      return a.token < b.token;
    });
    candidates.resize(std::min(width, candidates.size()));

    std::vector<Hypothesis> next;
    for (const auto& c : candidates) {
      Hypothesis h;
      h.tokens = live[c.hyp].tokens;
      h.logprobs = live[c.hyp].logprobs;
      h.logprobs.push_back(c.logprob);
      h.score = c.score;
      if (c.token == config.eos_id) {
        h.eos = true;
        finished.push_back(std::move(h));
        continue;
      }
      h.tokens.push_back(c.token);
      h.cache = live[c.hyp].cache;
      if (step + 1 < config.max_new_tokens) h.logits = decode_step(state, h.cache, c.token);
      next.push_back(std::move(h));
    }
    live = std::move(next);

    // Scores only decrease, so no live hypothesis can overtake a better finished one.
    if (!finished.empty() && !live.empty()) {
      double best_finished = kNegInf;
      for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
      if (best_finished >= live.front().score) live.clear();
    }
  }
  for (auto& h : live) finished.push_back(std::move(h));

  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (finished[i].score > finished[best].score) best = i;
  }
  DecodeResult r;
  r.ids = std::move(finished[best].tokens);
  r.per_step_logprob = std::move(finished[best].logprobs);
  r.stopped_on_eos = finished[best].eos;
  r.diagnostics = std::move(diagnostics);
  return r;
}

}  // namespace

DecodeStrategy parse_decode_strategy(std::string_view name) {
  if (name == "greedy") return DecodeStrategy::kGreedy;
  if (name == "beam") return DecodeStrategy::kBeam;
  if (name == "topk") return DecodeStrategy::kTopK;
  if (name == "nucleus") return DecodeStrategy::kNucleus;
  throw ConfigError("unknown decoding strategy '" + std::string(name) + "' (expected greedy|beam|topk|nucleus)");
}

std::string_view to_string(DecodeStrategy strategy) {
  switch (strategy) {
    case DecodeStrategy::kGreedy: return "greedy";
    case DecodeStrategy::kBeam: return "beam";
    case DecodeStrategy::kTopK: return "topk";
    case DecodeStrategy::kNucleus: return "nucleus";
  }
  return "?";
}

void DecodeConfig::validate(int vocab_size) const {
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (strategy == DecodeStrategy::kTopK && k > vocab_size) throw ConfigError("k must lie in [1, |V|]");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
  if (max_new_tokens < 0 || min_new_tokens < 0) throw ConfigError("token counts must be non-negative");
  if (min_new_tokens > max_new_tokens) throw ConfigError("min_new_tokens must not exceed max_new_tokens");
  if (ngram_ban < 0 || ngram_ban == 1) throw ConfigError("ngram_ban must be 0 (off) or >= 2");
}

nlohmann::json DecodeConfig::to_json() const {
  return {{"strategy", std::string(to_string(strategy))},
          {"beam_size", beam_size},
          {"k", k},
          {"top_p", top_p},
          {"max_new_tokens", max_new_tokens},
          {"min_new_tokens", min_new_tokens},
          {"ngram_ban", ngram_ban},
          {"seed", seed},
          {"eos_id", eos_id}};
}

DecodeConfig DecodeConfig::from_json(const nlohmann::json& j) {
  DecodeConfig c;
  if (j.contains("strategy")) c.strategy = parse_decode_strategy(j.at("strategy").get<std::string>());
  c.beam_size = j.value("beam_size", c.beam_size);
  c.k = j.value("k", c.k);
  c.top_p = j.value("top_p", c.top_p);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.min_new_tokens = j.value("min_new_tokens", c.min_new_tokens);
  c.ngram_ban = j.value("ngram_ban", c.ngram_ban);
  c.seed = j.value("seed", c.seed);
  c.eos_id = j.value("eos_id", c.eos_id);
  return c;
}

DecodeResult decode(const ModelState& state, std::span<const TokenId> prefix, const DecodeConfig& config) {
  check_prefix(state, prefix, config);
  if (config.max_new_tokens == 0) return {};
  if (config.strategy == DecodeStrategy::kBeam) return decode_beam(state, prefix, config);
  return decode_single(state, prefix, config);
}

std::vector<TokenId> nucleus_pool(std::span<const double> probs, double p) {
  if (probs.empty()) throw InputError("empty distribution");
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
  const auto order = ranked(probs);
  std::vector<TokenId> pool;
  double mass = 0.0;
  for (TokenId v : order) {
    const double q = probs[static_cast<std::size_t>(v)];
    if (q <= 0.0 && !pool.empty()) break;
    pool.push_back(v);
    mass += q;
    if (mass >= p) break;
  }
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<TokenId> top_k_pool(std::span<const double> probs, int k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  auto order = ranked(probs);
  order.resize(std::min(order.size(), static_cast<std::size_t>(k)));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<TokenId> ngram_ban_mask(std::span<const TokenId> context, int n) {
  if (n < 2) throw ConfigError("n-gram ban needs n >= 2");
  const auto len = context.size();
  const auto m = static_cast<std::size_t>(n - 1);
  std::vector<TokenId> banned;
  if (len < m) return banned;
  const auto suffix = context.subspan(len - m);
  for (std::size_t s = 0; s + m < len; ++s) {
    if (std::equal(suffix.begin(), suffix.end(), context.begin() + static_cast<std::ptrdiff_t>(s))) {
      banned.push_back(context[s + m]);
    }
  }
  std::sort(banned.begin(), banned.end());
  banned.erase(std::unique(banned.begin(), banned.end()), banned.end());
  return banned;
}

}  // namespace ctlm
