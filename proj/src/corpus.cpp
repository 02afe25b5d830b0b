#include "ctlm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ctlm/error.hpp"

namespace ctlm {

namespace {

const char* const kSpecialNames[Vocabulary::kNumSpecial] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation or invalid byte: keep it as a single unit
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string escape_token(const std::string& token) {
  std::string out;
  for (char c : token) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      case ' ': out += "\\s"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_token(const std::string& line) {
  std::string out;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] != '\\') {
      out += line[i];
      continue;
    }
    if (++i == line.size()) throw FormatError("vocabulary: dangling escape in '" + line + "'");
    switch (line[i]) {
      case '\\': out += '\\'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 't': out += '\t'; break;
      case 's': out += ' '; break;
      default: throw FormatError("vocabulary: unknown escape in '" + line + "'");
    }
  }
  return out;
}

}  // namespace

TokenizerMode parse_tokenizer_mode(std::string_view name) {
  if (name == "char") return TokenizerMode::kChar;
  if (name == "word") return TokenizerMode::kWord;
  throw ConfigError("unknown tokenizer mode '" + std::string(name) + "' (expected char|word)");
}

std::string_view to_string(TokenizerMode mode) {
  return mode == TokenizerMode::kChar ? "char" : "word";
}

Vocabulary::Vocabulary(TokenizerMode mode, std::vector<std::string> regular_tokens) : mode_(mode) {
  tokens_.reserve(regular_tokens.size() + kNumSpecial);
  for (const char* name : kSpecialNames) tokens_.emplace_back(name);
  for (auto& t : regular_tokens) tokens_.push_back(std::move(t));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw FormatError("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.find(std::string(token)) != index_.end();
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write vocabulary to " + path.string());
  for (const auto& t : tokens_) out << escape_token(t) << '\n';
  if (!out) throw InputError("failed writing vocabulary to " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path, TokenizerMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(unescape_token(line));
  if (lines.size() < kNumSpecial + 1) throw FormatError("vocabulary file too short: " + path.string());
  for (int i = 0; i < kNumSpecial; ++i) {
    if (lines[static_cast<std::size_t>(i)] != kSpecialNames[i]) {
      throw FormatError("vocabulary line " + std::to_string(i) + " must be " + kSpecialNames[i]);
    }
  }
  return Vocabulary(mode, std::vector<std::string>(lines.begin() + kNumSpecial, lines.end()));
}

std::vector<std::string> tokenize(std::string_view text, TokenizerMode mode) {
  std::vector<std::string> out;
  if (mode == TokenizerMode::kChar) {
    for (std::size_t i = 0; i < text.size();) {
      std::size_t n = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
      out.emplace_back(text.substr(i, n));
      i += n;
    }
    return out;
  }
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

Vocabulary build_vocab(std::string_view text, TokenizerMode mode, int max_size) {
  if (max_size < Vocabulary::kNumSpecial + 1) {
    throw ConfigError("max vocabulary size must be at least 5, got " + std::to_string(max_size));
  }
  if (text.empty()) throw InputError("cannot build a vocabulary from empty text");

  std::map<std::string, long long> counts;
  for (auto& t : tokenize(text, mode)) ++counts[std::move(t)];
  for (const char* name : kSpecialNames) counts.erase(name);
  if (counts.empty()) throw InputError("text contains no tokens");

  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  // std::map iteration is already lexicographic, so a stable sort on count keeps ties ordered.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep =
      std::min(ranked.size(), static_cast<std::size_t>(max_size - Vocabulary::kNumSpecial));
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(std::move(ranked[i].first));
  return Vocabulary(mode, std::move(tokens));
}

std::vector<TokenId> encode(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenId> ids;
  for (const auto& t : tokenize(text, vocab.mode())) ids.push_back(vocab.id(t));
  return ids;
}

std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::string out;
  const bool words = vocab.mode() == TokenizerMode::kWord;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (words && i > 0) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

std::vector<std::vector<TokenId>> chunk(std::span<const TokenId> ids, int trunk_length) {
  if (trunk_length < 2) throw ConfigError("trunk length must be at least 2");
  std::vector<std::vector<TokenId>> trunks;
  const auto len = static_cast<std::size_t>(trunk_length);
  for (std::size_t start = 0; start < ids.size(); start += len) {
    const std::size_t n = std::min(len, ids.size() - start);
    if (n < 2) break;
    trunks.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start),
                        ids.begin() + static_cast<std::ptrdiff_t>(start + n));
  }
  return trunks;
}

std::vector<EvalInstance> make_eval_instances(std::span<const TokenId> ids, int prefix_len,
                                              int cont_len) {
  if (prefix_len < 1 || cont_len < 1) throw ConfigError("prefix and continuation lengths must be positive");
  std::vector<EvalInstance> out;
  const auto window = static_cast<std::size_t>(prefix_len + cont_len);
  for (std::size_t start = 0; start + window <= ids.size(); start += window) {
    auto it = ids.begin() + static_cast<std::ptrdiff_t>(start);
    EvalInstance inst;
    inst.prefix.assign(it, it + prefix_len);
    inst.reference_continuation.assign(it + prefix_len, it + static_cast<std::ptrdiff_t>(window));
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<TokenId> Corpus::flatten(const std::vector<std::vector<TokenId>>& trunks) {
  std::vector<TokenId> out;
  for (const auto& t : trunks) out.insert(out.end(), t.begin(), t.end());
  return out;
}

Corpus split_corpus(std::span<const TokenId> ids, int trunk_length, SplitRatios ratios) {
  if (ratios.train <= 0 || ratios.valid < 0 || ratios.test < 0) throw ConfigError("invalid split ratios");
  auto trunks = chunk(ids, trunk_length);
  const double total = ratios.train + ratios.valid + ratios.test;
  const auto n = trunks.size();
  const auto n_valid = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.valid / total));
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.test / total));
  if (n_valid + n_test >= n) throw InputError("corpus too small to split into train/valid/test");
  Corpus c;
  c.trunk_length = trunk_length;
  const std::size_t n_train = n - n_valid - n_test;
  c.train.assign(trunks.begin(), trunks.begin() + static_cast<std::ptrdiff_t>(n_train));
  c.valid.assign(trunks.begin() + static_cast<std::ptrdiff_t>(n_train),
                 trunks.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  c.test.assign(trunks.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), trunks.end());
  return c;
}

Corpus make_corpus(std::span<const TokenId> train, std::span<const TokenId> valid,
                   std::span<const TokenId> test, int trunk_length) {
  Corpus c;
  c.trunk_length = trunk_length;
  c.train = chunk(train, trunk_length);
  c.valid = chunk(valid, trunk_length);
  c.test = chunk(test, trunk_length);
  return c;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ctlm
