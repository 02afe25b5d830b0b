#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ctlm/corpus.hpp"
#include "ctlm/error.hpp"

namespace ctlm {
namespace {

TEST(Vocab, CharModeOrdersByFrequency) {
  const Vocabulary v = build_vocab("aba", TokenizerMode::kChar, 10);
  ASSERT_EQ(v.size(), 6);
  EXPECT_EQ(v.token(0), "<pad>");
  EXPECT_EQ(v.token(3), "<unk>");
  EXPECT_EQ(v.id("a"), 4);
  EXPECT_EQ(v.id("b"), 5);
}

TEST(Vocab, WordModeBreaksTiesLexicographically) {
  const Vocabulary v = build_vocab("x y x", TokenizerMode::kWord, 10);
  EXPECT_EQ(v.id("x"), 4);
  EXPECT_EQ(v.id("y"), 5);
  const Vocabulary tie = build_vocab("b a c", TokenizerMode::kWord, 10);
  EXPECT_EQ(tie.token(4), "a");
  EXPECT_EQ(tie.token(5), "b");
  EXPECT_EQ(tie.token(6), "c");
}

TEST(Vocab, CapKeepsMostFrequent) {
  const Vocabulary v = build_vocab("a a a b b c", TokenizerMode::kWord, 6);
  EXPECT_EQ(v.size(), 6);
  EXPECT_FALSE(v.contains("c"));
  EXPECT_EQ(v.id("c"), Vocabulary::kUnk);
}

TEST(Vocab, RejectsBadInput) {
  EXPECT_THROW(build_vocab("", TokenizerMode::kChar, 10), InputError);
  EXPECT_THROW(build_vocab("abc", TokenizerMode::kChar, 4), ConfigError);
}

TEST(Vocab, SpecialsAreStructuralExceptUnknown) {
  EXPECT_TRUE(Vocabulary::is_structural(Vocabulary::kPad));
  EXPECT_TRUE(Vocabulary::is_structural(Vocabulary::kBos));
  EXPECT_TRUE(Vocabulary::is_structural(Vocabulary::kEos));
  EXPECT_FALSE(Vocabulary::is_structural(Vocabulary::kUnk));
  EXPECT_FALSE(Vocabulary::is_structural(4));
}

TEST(Encoding, RoundTripInVocabularyText) {
  const Vocabulary v = build_vocab("ab", TokenizerMode::kChar, 10);
  EXPECT_EQ(decode(v, encode(v, "abab")), "abab");
  const Vocabulary w = build_vocab("the cat sat", TokenizerMode::kWord, 10);
  EXPECT_EQ(decode(w, encode(w, "sat the cat")), "sat the cat");
}

TEST(Encoding, UnknownTokensBecomeUnk) {
  const Vocabulary v = build_vocab("ab", TokenizerMode::kChar, 10);
  EXPECT_EQ(encode(v, "z"), std::vector<TokenId>{Vocabulary::kUnk});
}

TEST(Encoding, DecodeRejectsOutOfRangeIds) {
  const Vocabulary v = build_vocab("ab", TokenizerMode::kChar, 10);
  EXPECT_THROW(decode(v, std::vector<TokenId>{v.size()}), RangeError);
  EXPECT_THROW(decode(v, std::vector<TokenId>{-1}), RangeError);
}

TEST(Encoding, CharModeSplitsUtf8CodePoints) {
  const auto t = tokenize("h\xc3\xa9\xe2\x82\xac", TokenizerMode::kChar);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[1], "\xc3\xa9");
  EXPECT_EQ(t[2], "\xe2\x82\xac");
}

TEST(Encoding, WordModeSplitsOnAnyWhitespace) {
  const auto t = tokenize("  a\tb\n\nc ", TokenizerMode::kWord);
  EXPECT_EQ(t, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(VocabFile, SaveLoadRoundTripWithEscapes) {
  const auto dir = std::filesystem::temp_directory_path() / "ctlm_vocab_test";
  std::filesystem::create_directories(dir);
  const Vocabulary v = build_vocab("a b\n\\ \t", TokenizerMode::kChar, 20);
  v.save(dir / "vocab.txt");
  const Vocabulary w = Vocabulary::load(dir / "vocab.txt", TokenizerMode::kChar);
  ASSERT_EQ(w.size(), v.size());
  for (TokenId i = 0; i < v.size(); ++i) EXPECT_EQ(w.token(i), v.token(i));
  {
    std::ofstream bad(dir / "bad.txt");
    bad << "<bos>\n<pad>\n<eos>\n<unk>\nx\n";
  }
  EXPECT_THROW(Vocabulary::load(dir / "bad.txt", TokenizerMode::kWord), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Chunk, LengthsAndTailRule) {
  std::vector<TokenId> ids(10, 5);
  auto lengths = [](const std::vector<std::vector<TokenId>>& trunks) {
    std::vector<std::size_t> out;
    for (const auto& t : trunks) out.push_back(t.size());
    return out;
  };
  EXPECT_EQ(lengths(chunk(ids, 4)), (std::vector<std::size_t>{4, 4, 2}));
  EXPECT_EQ(lengths(chunk(std::vector<TokenId>(4, 5), 4)), (std::vector<std::size_t>{4}));
  EXPECT_EQ(lengths(chunk(std::vector<TokenId>(5, 5), 4)), (std::vector<std::size_t>{4}));
  EXPECT_THROW(chunk(ids, 1), ConfigError);
}

TEST(Chunk, PreservesOrder) {
  std::vector<TokenId> ids(23);
  for (int i = 0; i < 23; ++i) ids[static_cast<std::size_t>(i)] = i;
  const auto trunks = chunk(ids, 5);
  EXPECT_EQ(Corpus::flatten(trunks), std::vector<TokenId>(ids.begin(), ids.begin() + 23));
}

TEST(EvalInstances, NonOverlappingWindows) {
  EXPECT_EQ(make_eval_instances(std::vector<TokenId>(150, 4)).size(), 1u);
  EXPECT_EQ(make_eval_instances(std::vector<TokenId>(300, 4)).size(), 2u);
  EXPECT_TRUE(make_eval_instances(std::vector<TokenId>(149, 4)).empty());
  std::vector<TokenId> ids(10);
  for (int i = 0; i < 10; ++i) ids[static_cast<std::size_t>(i)] = i;
  const auto inst = make_eval_instances(ids, 2, 3);
  ASSERT_EQ(inst.size(), 2u);
  EXPECT_EQ(inst[1].prefix, (std::vector<TokenId>{5, 6}));
  EXPECT_EQ(inst[1].reference_continuation, (std::vector<TokenId>{7, 8, 9}));
}

TEST(Split, DefaultRatiosByTrunkCount) {
  std::vector<TokenId> ids(400, 4);
  const Corpus c = split_corpus(ids, 4);
  EXPECT_EQ(c.train.size(), 90u);
  EXPECT_EQ(c.valid.size(), 5u);
  EXPECT_EQ(c.test.size(), 5u);
  EXPECT_EQ(c.trunk_length, 4);
}

}  // namespace
}  // namespace ctlm
