#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "ctlm/decoding.hpp"
#include "ctlm/error.hpp"
#include "ctlm/losses.hpp"
#include "ctlm/metrics.hpp"
#include "test_util.hpp"

namespace ctlm {
namespace {

using testing::constant_model;
using testing::peaked_model;
using testing::random_ids;

DecodeConfig greedy(int n) {
  DecodeConfig c;
  c.strategy = DecodeStrategy::kGreedy;
  c.max_new_tokens = n;
  return c;
}

TEST(NucleusPool, Examples) {
  EXPECT_EQ(nucleus_pool(std::vector<double>{0.5, 0.3, 0.15, 0.05}, 0.9), (std::vector<TokenId>{0, 1, 2}));
  EXPECT_EQ(nucleus_pool(std::vector<double>{0.05, 0.15, 0.3, 0.5}, 0.9), (std::vector<TokenId>{1, 2, 3}));
  EXPECT_EQ(nucleus_pool(std::vector<double>{0.2, 0.0, 0.5, 0.3}, 1.0), (std::vector<TokenId>{0, 2, 3}));
  EXPECT_EQ(nucleus_pool(std::vector<double>{0.0, 1.0, 0.0}, 0.01), (std::vector<TokenId>{1}));
  EXPECT_EQ(nucleus_pool(std::vector<double>{0.0, 1.0, 0.0}, 1.0), (std::vector<TokenId>{1}));
}

TEST(NucleusPool, TiesPreferLowerIds) {
  EXPECT_EQ(nucleus_pool(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 0.5), (std::vector<TokenId>{0, 1}));
}

TEST(NucleusPool, MinimalOnRandomDistributions) {
  std::mt19937_64 rng(12);
  std::gamma_distribution<double> g(0.5, 1.0);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(2 + trial % 30);
    double s = 0.0;
    for (auto& v : p) s += v = g(rng);
    for (auto& v : p) v /= s;
    const double top_p = u(rng);
    const auto pool = nucleus_pool(p, top_p);
    ASSERT_FALSE(pool.empty());
    double mass = 0.0;
    double lowest = 2.0;
    for (TokenId t : pool) {
      mass += p[static_cast<std::size_t>(t)];
      lowest = std::min(lowest, p[static_cast<std::size_t>(t)]);
    }
    EXPECT_GE(mass, top_p - 1e-12) << "trial " << trial;
    EXPECT_LT(mass - lowest, top_p) << "trial " << trial;
    // Every excluded token is no more probable than the least probable member.
    for (std::size_t v = 0; v < p.size(); ++v) {
      if (!std::binary_search(pool.begin(), pool.end(), static_cast<TokenId>(v))) {
        EXPECT_LE(p[v], lowest);
      }
    }
  }
}

TEST(TopKPool, PicksMostProbable) {
  EXPECT_EQ(top_k_pool(std::vector<double>{0.1, 0.4, 0.1, 0.4}, 2), (std::vector<TokenId>{1, 3}));
  EXPECT_EQ(top_k_pool(std::vector<double>{0.1, 0.4, 0.1, 0.4}, 3), (std::vector<TokenId>{0, 1, 3}));
  EXPECT_EQ(top_k_pool(std::vector<double>{0.1, 0.9}, 5), (std::vector<TokenId>{0, 1}));
}

TEST(NgramBan, Examples) {
  const std::vector<TokenId> ctx = {4, 5, 6, 4, 5};
  EXPECT_EQ(ngram_ban_mask(ctx, 3), std::vector<TokenId>{6});
  EXPECT_TRUE(ngram_ban_mask(std::vector<TokenId>{4}, 3).empty());
  EXPECT_TRUE(ngram_ban_mask(std::vector<TokenId>{4, 5, 6, 7}, 3).empty());
  EXPECT_EQ(ngram_ban_mask(std::vector<TokenId>{4, 5, 4, 6, 4}, 2), (std::vector<TokenId>{5, 6}));
  EXPECT_THROW(ngram_ban_mask(ctx, 1), ConfigError);
}

TEST(Decode, GreedyPicksArgmaxWithLowestIdTies) {
  const ModelState m = constant_model({0.0f, 1.0f, 0.5f, 3.0f, 3.0f, -1.0f});
  const auto r = decode(m, std::vector<TokenId>{5}, greedy(4));
  EXPECT_EQ(r.ids, (std::vector<TokenId>{3, 3, 3, 3}));
  ASSERT_EQ(r.per_step_logprob.size(), 4u);
  const std::vector<double> z = {0.0, 1.0, 0.5, 3.0, 3.0, -1.0};
  EXPECT_NEAR(r.per_step_logprob[0], -ce_step(std::span<const double>(z), 3), 1e-6);
}

TEST(Decode, BeamWidthOneEqualsGreedy) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelState m = peaked_model(11, static_cast<std::uint64_t>(trial));
    const auto prefix = random_ids(rng, 1 + trial % 7, 3, 10);
    DecodeConfig beam = greedy(25);
    beam.strategy = DecodeStrategy::kBeam;
    beam.beam_size = 1;
    EXPECT_EQ(decode(m, prefix, beam).ids, decode(m, prefix, greedy(25)).ids) << "trial " << trial;
  }
}

TEST(Decode, TopOneSamplingEqualsGreedy) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelState m = peaked_model(11, static_cast<std::uint64_t>(100 + trial));
    const auto prefix = random_ids(rng, 3, 3, 10);
    DecodeConfig topk = greedy(25);
    topk.strategy = DecodeStrategy::kTopK;
    topk.k = 1;
    topk.seed = static_cast<std::uint64_t>(trial);
    EXPECT_EQ(decode(m, prefix, topk).ids, decode(m, prefix, greedy(25)).ids);
  }
}

// With a beam wide enough to hold every hypothesis, beam search is exhaustive.
TEST(Decode, WideBeamFindsBestSequence) {
  const ModelState m = peaked_model(5, 21);
  const std::vector<TokenId> prefix = {3, 4};
  const int steps = 3;
  double best = -1e300;
  std::vector<TokenId> best_ids;
  std::function<void(std::vector<TokenId>&, double)> search = [&](std::vector<TokenId>& gen, double score) {
    if (static_cast<int>(gen.size()) == steps) {
      if (score > best) {
        best = score;
        best_ids = gen;
      }
      return;
    }
    std::vector<TokenId> ctx = prefix;
    ctx.insert(ctx.end(), gen.begin(), gen.end());
    const auto logits = next_token_logits(m, ctx);
    const std::vector<double> z(logits.begin(), logits.end());
    for (TokenId v = 0; v < 5; ++v) {
      const double lp = -ce_step(std::span<const double>(z), v);
      if (v == Vocabulary::kEos) {
        if (score + lp > best) {
          best = score + lp;
          best_ids = gen;
        }
        continue;
      }
      gen.push_back(v);
      search(gen, score + lp);
      gen.pop_back();
    }
  };
  std::vector<TokenId> gen;
  search(gen, 0.0);

  DecodeConfig c = greedy(steps);
  c.strategy = DecodeStrategy::kBeam;
  c.beam_size = 125;
  const auto r = decode(m, prefix, c);
  EXPECT_EQ(r.ids, best_ids);
  double total = 0.0;
  for (double lp : r.per_step_logprob) total += lp;
  EXPECT_NEAR(total, best, 1e-4);
}

TEST(Decode, NgramBanRemovesRepeats) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelState m = peaked_model(11, static_cast<std::uint64_t>(200 + trial));
    const auto prefix = random_ids(rng, 5, 3, 10);
    for (DecodeStrategy s : {DecodeStrategy::kGreedy, DecodeStrategy::kBeam, DecodeStrategy::kNucleus}) {
      DecodeConfig c = greedy(40);
      c.strategy = s;
      c.ngram_ban = 3;
      const auto r = decode(m, prefix, c);
      std::vector<TokenId> full = prefix;
      full.insert(full.end(), r.ids.begin(), r.ids.end());
      if (r.diagnostics.empty()) {
        EXPECT_EQ(rep_n(r.ids, 3), 0.0);
        EXPECT_EQ(rep_n(r.ids, 4), 0.0);
        EXPECT_EQ(rep_n(full, 3), 0.0) << "prefix trigrams are never repeated";
      }
    }
  }
}

TEST(Decode, AllBannedFallsBackWithDiagnostic) {
  // Every bigram (4, v) occurs in the prefix, so nothing may follow the final 4.
  const ModelState m = constant_model({0.0f, 0.0f, 0.0f, 0.0f, 2.0f, 1.0f});
  const std::vector<TokenId> prefix = {4, 0, 4, 1, 4, 2, 4, 3, 4, 4, 4, 5, 4};
  DecodeConfig c = greedy(3);
  c.ngram_ban = 2;
  const auto r = decode(m, prefix, c);
  ASSERT_EQ(r.ids.size(), 3u);
  EXPECT_EQ(r.ids[0], 4);
  ASSERT_FALSE(r.diagnostics.empty());
  EXPECT_NE(r.diagnostics[0].find("step 0"), std::string::npos);
}

TEST(Decode, StopsOnEosAndHonoursMinimumLength) {
  const ModelState m = constant_model({0.0f, 0.0f, 5.0f, 0.0f, 1.0f});
  const std::vector<TokenId> prefix = {4};
  const auto early = decode(m, prefix, greedy(50));
  EXPECT_TRUE(early.ids.empty());
  EXPECT_TRUE(early.stopped_on_eos);
  for (DecodeStrategy s : {DecodeStrategy::kGreedy, DecodeStrategy::kBeam, DecodeStrategy::kTopK,
                           DecodeStrategy::kNucleus}) {
    DecodeConfig c = greedy(50);
    c.strategy = s;
    c.k = 3;
    c.min_new_tokens = 20;
    const auto r = decode(m, prefix, c);
    EXPECT_GE(r.ids.size(), 20u) << to_string(s);
    for (TokenId t : r.ids) EXPECT_NE(t, Vocabulary::kEos);
  }
}

TEST(Decode, LengthIsMaxWithoutEos) {
  const ModelState m = constant_model({0.0f, 0.0f, -5.0f, 0.0f, 1.0f});
  for (DecodeStrategy s : {DecodeStrategy::kGreedy, DecodeStrategy::kBeam, DecodeStrategy::kTopK,
                           DecodeStrategy::kNucleus}) {
    DecodeConfig c = greedy(17);
    c.strategy = s;
    c.k = 5;
    c.top_p = 0.99;
    c.eos_id = -1;
    const auto r = decode(m, std::vector<TokenId>{4}, c);
    EXPECT_EQ(r.ids.size(), 17u) << to_string(s);
    EXPECT_EQ(r.per_step_logprob.size(), 17u);
  }
}

TEST(Decode, SamplingIsReproducibleForASeed) {
  const ModelState m = peaked_model(11, 5);
  const std::vector<TokenId> prefix = {4, 5, 6};
  DecodeConfig c = greedy(30);
  c.strategy = DecodeStrategy::kNucleus;
  c.top_p = 0.95;
  c.seed = 99;
  const auto a = decode(m, prefix, c);
  const auto b = decode(m, prefix, c);
  EXPECT_EQ(a.ids, b.ids);
  bool differs = false;
  for (std::uint64_t s = 1; s < 10 && !differs; ++s) {
    c.seed = s;
    differs = decode(m, prefix, c).ids != a.ids;
  }
  EXPECT_TRUE(differs);
}

TEST(Decode, SampledTokensStayInsideThePool) {
  // p is about (0.64, 0.24, 0.09, ...) over ids 4, 5, 6; top-k = 2 never yields 6 or lower ranks.
  const ModelState m = constant_model({-9.0f, -9.0f, -9.0f, -9.0f, 2.0f, 1.0f, 0.0f});
  DecodeConfig c = greedy(60);
  c.strategy = DecodeStrategy::kTopK;
  c.k = 2;
  const auto r = decode(m, std::vector<TokenId>{4}, c);
  EXPECT_TRUE(std::find(r.ids.begin(), r.ids.end(), 5) != r.ids.end());
  for (TokenId t : r.ids) EXPECT_TRUE(t == 4 || t == 5);
}

TEST(Decode, RejectsBadRequests) {
  const ModelState m = peaked_model(11, 1, 16);
  EXPECT_THROW(decode(m, std::vector<TokenId>{}, greedy(3)), InputError);
  EXPECT_THROW(decode(m, std::vector<TokenId>(10, 4), greedy(7)), RangeError);
  DecodeConfig c = greedy(3);
  c.k = 0;
  EXPECT_THROW(decode(m, std::vector<TokenId>{4}, c), ConfigError);
  c = greedy(3);
  c.top_p = 0.0;
  EXPECT_THROW(decode(m, std::vector<TokenId>{4}, c), ConfigError);
  c = greedy(3);
  c.min_new_tokens = 4;
  EXPECT_THROW(decode(m, std::vector<TokenId>{4}, c), ConfigError);
  c = greedy(3);
  c.beam_size = 0;
  EXPECT_THROW(decode(m, std::vector<TokenId>{4}, c), ConfigError);
  EXPECT_THROW(parse_decode_strategy("sample"), ConfigError);
}

TEST(DecodeConfigJson, RoundTrip) {
  DecodeConfig c;
  c.strategy = DecodeStrategy::kNucleus;
  c.top_p = 0.75;
  c.ngram_ban = 3;
  c.seed = 42;
  const DecodeConfig d = DecodeConfig::from_json(c.to_json());
  EXPECT_EQ(d.to_json(), c.to_json());
}

}  // namespace
}  // namespace ctlm
