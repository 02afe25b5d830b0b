#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctlm/tensor.hpp"

namespace ctlm {

enum class TokenizerMode { kChar, kWord };

TokenizerMode parse_tokenizer_mode(std::string_view name);
std::string_view to_string(TokenizerMode mode);

/// Token string <-> id mapping. Ids 0..3 are pad, bos, eos, unk; the rest are
/// ordered by descending training frequency.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr int kNumSpecial = 4;

  Vocabulary(TokenizerMode mode, std::vector<std::string> regular_tokens);

  TokenizerMode mode() const { return mode_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(TokenId id) const;
  /// Returns kUnk for out-of-vocabulary strings.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;

  /// pad, bos and eos carry no text and never count as negatives or in metrics.
  static bool is_structural(TokenId id) { return id == kPad || id == kBos || id == kEos; }

  /// One token per line, line number = id. Control characters and spaces are
  /// backslash-escaped so every token fits on one line.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path, TokenizerMode mode);

 private:
  TokenizerMode mode_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Splits text into tokens: UTF-8 code points in char mode, whitespace-separated
/// words in word mode.
std::vector<std::string> tokenize(std::string_view text, TokenizerMode mode);

Vocabulary build_vocab(std::string_view text, TokenizerMode mode, int max_size);

std::vector<TokenId> encode(const Vocabulary& vocab, std::string_view text);
std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids);

/// Consecutive non-overlapping windows of `trunk_length`; a trailing window
/// shorter than 2 tokens is dropped.
std::vector<std::vector<TokenId>> chunk(std::span<const TokenId> ids, int trunk_length);

struct EvalInstance {
  std::vector<TokenId> prefix;
  std::vector<TokenId> reference_continuation;
};

std::vector<EvalInstance> make_eval_instances(std::span<const TokenId> ids, int prefix_len = 50,
                                              int cont_len = 100);

struct Corpus {
  std::vector<std::vector<TokenId>> train;
  std::vector<std::vector<TokenId>> valid;
  std::vector<std::vector<TokenId>> test;
  int trunk_length = 0;

  /// Concatenation of a split's trunks in order.
  static std::vector<TokenId> flatten(const std::vector<std::vector<TokenId>>& trunks);
};

struct SplitRatios {
  double train = 0.90;
  double valid = 0.05;
  double test = 0.05;
};

/// Chunks one token stream and assigns trunks contiguously by ratio.
Corpus split_corpus(std::span<const TokenId> ids, int trunk_length, SplitRatios ratios = {});

/// Chunks three already-separated token streams.
Corpus make_corpus(std::span<const TokenId> train, std::span<const TokenId> valid,
                   std::span<const TokenId> test, int trunk_length);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace ctlm
