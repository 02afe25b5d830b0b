#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "ctlm/corpus.hpp"
#include "ctlm/error.hpp"
#include "ctlm/negatives.hpp"

namespace ctlm {
namespace {

constexpr TokenId a = 4, b = 5, c = 6;

TEST(PrecedingAll, Examples) {
  const std::vector<TokenId> s1 = {a, b, a, c};
  EXPECT_EQ(preceding_all(s1, 3), (NegativeSet{{a, 1}, {b, 1}}));
  const std::vector<TokenId> s2 = {a, a, a};
  EXPECT_TRUE(preceding_all(s2, 2).empty());
  EXPECT_TRUE(preceding_all(s1, 0).empty());
}

TEST(PrecedingAll, ExcludesStructuralTokensButKeepsUnknown) {
  const std::vector<TokenId> s = {Vocabulary::kBos, Vocabulary::kPad, Vocabulary::kUnk, Vocabulary::kEos, a};
  EXPECT_EQ(preceding_all(s, 4), (NegativeSet{{Vocabulary::kUnk, 1}}));
}

TEST(PrecedingM, Examples) {
  const std::vector<TokenId> s1 = {a, b, a, c, a};
  EXPECT_EQ(preceding_m(s1, 4, 4), (NegativeSet{{b, 1}, {c, 1}}));
  const std::vector<TokenId> s2 = {b, b, c, a};
  EXPECT_EQ(preceding_m(s2, 3, 3), (NegativeSet{{b, 2}, {c, 1}}));
  EXPECT_TRUE(preceding_m(s2, 0, 5).empty());
}

TEST(PrecedingM, WindowTruncatesAtStart) {
  const std::vector<TokenId> s = {b, b, c, a};
  EXPECT_EQ(preceding_m(s, 3, 1), (NegativeSet{{c, 1}}));
  EXPECT_EQ(preceding_m(s, 3, 100), (NegativeSet{{b, 2}, {c, 1}}));
  EXPECT_THROW(preceding_m(s, 3, 0), ConfigError);
}

TEST(PrecedingM, RandomProperties) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> id(0, 9);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<TokenId> s(20);
    for (auto& t : s) t = id(rng);
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, s.size() - 1)(rng);
    const int m = std::uniform_int_distribution<int>(1, 25)(rng);
    const auto neg = preceding_m(s, t, m);
    // Independent oracle: count the window directly.
    std::map<TokenId, int> expected;
    for (std::size_t i = t > static_cast<std::size_t>(m) ? t - static_cast<std::size_t>(m) : 0; i < t; ++i) {
      if (s[i] != s[t] && !Vocabulary::is_structural(s[i])) ++expected[s[i]];
    }
    NegativeSet want;
    for (const auto& [k, v] : expected) want.push_back({k, v});
    ASSERT_EQ(neg, want) << "trial " << trial;
    EXPECT_LE(total_count(neg), m);
    if (static_cast<std::size_t>(m) >= t) {
      std::set<TokenId> support;
      for (const auto& e : neg) support.insert(e.id);
      std::set<TokenId> all;
      for (const auto& e : preceding_all(s, t)) all.insert(e.id);
      EXPECT_EQ(support, all);
    }
  }
}

TEST(RepeatedNgrams, Examples) {
  const std::vector<TokenId> s = {a, b, a, b, a, b};
  EXPECT_EQ(repeated_ngram_candidates(s, 2), (std::vector<bool>{false, false, false, true, true, true}));
  const std::vector<TokenId> distinct = {a, b, c, 7, 8};
  for (bool f : repeated_ngram_candidates(distinct, 2)) EXPECT_FALSE(f);
  const std::vector<TokenId> short_seq = {a, a, a};
  for (bool f : repeated_ngram_candidates(short_seq, 4)) EXPECT_FALSE(f);
  EXPECT_THROW(repeated_ngram_candidates(s, 1), ConfigError);
}

TEST(RepeatedNgrams, MatchesBruteForce) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> id(4, 6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TokenId> s(15);
    for (auto& t : s) t = id(rng);
    const int n = 2 + trial % 3;
    const auto flags = repeated_ngram_candidates(s, n);
    for (std::size_t t = 0; t < s.size(); ++t) {
      bool expected = false;
      if (t + 1 >= static_cast<std::size_t>(n)) {
        for (std::size_t u = static_cast<std::size_t>(n) - 1; u < t && !expected; ++u) {
          expected = std::equal(s.begin() + static_cast<std::ptrdiff_t>(t + 1 - static_cast<std::size_t>(n)),
                                s.begin() + static_cast<std::ptrdiff_t>(t + 1),
                                s.begin() + static_cast<std::ptrdiff_t>(u + 1 - static_cast<std::size_t>(n)));
        }
      }
      ASSERT_EQ(flags[t], expected) << "trial " << trial << " t " << t;
    }
  }
}

}  // namespace
}  // namespace ctlm
