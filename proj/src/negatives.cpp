#include "ctlm/negatives.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "ctlm/corpus.hpp"
#include "ctlm/error.hpp"

namespace ctlm {

namespace {

NegativeSet gather(std::span<const TokenId> window, TokenId label, bool with_multiplicity) {
  std::map<TokenId, int> counts;
  for (TokenId id : window) {
    if (id == label || Vocabulary::is_structural(id)) continue;
    ++counts[id];
  }
  NegativeSet out;
  out.reserve(counts.size());
  for (const auto& [id, count] : counts) out.push_back({id, with_multiplicity ? count : 1});
  return out;
}

}  // namespace

int total_count(const NegativeSet& negatives) {
  int n = 0;
  for (const auto& e : negatives) n += e.count;
  return n;
}

NegativeSet preceding_all(std::span<const TokenId> labels, std::size_t t) {
  if (t >= labels.size()) {
    if (t == 0) return {};
    throw RangeError("position " + std::to_string(t) + " outside sequence of length " +
                     std::to_string(labels.size()));
  }
  return gather(labels.first(t), labels[t], false);
}

NegativeSet preceding_m(std::span<const TokenId> labels, std::size_t t, int window) {
  if (window < 1) throw ConfigError("negative window M must be >= 1");
  if (t >= labels.size()) {
    if (t == 0) return {};
    throw RangeError("position " + std::to_string(t) + " outside sequence of length " +
                     std::to_string(labels.size()));
  }
  const std::size_t start = t > static_cast<std::size_t>(window) ? t - static_cast<std::size_t>(window) : 0;
  return gather(labels.subspan(start, t - start), labels[t], true);
}

std::vector<bool> repeated_ngram_candidates(std::span<const TokenId> sequence, int n) {
  if (n < 2) throw ConfigError("n-gram order for repeat candidates must be >= 2");
  std::vector<bool> flags(sequence.size(), false);
  const auto order = static_cast<std::size_t>(n);
  std::set<std::vector<TokenId>> seen;
  for (std::size_t end = order - 1; end < sequence.size(); ++end) {
    std::vector<TokenId> gram(sequence.begin() + static_cast<std::ptrdiff_t>(end + 1 - order),
                              sequence.begin() + static_cast<std::ptrdiff_t>(end + 1));
    if (!seen.insert(std::move(gram)).second) flags[end] = true;
  }
  return flags;
}

}  // namespace ctlm
