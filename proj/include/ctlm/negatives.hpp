#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctlm/tensor.hpp"

namespace ctlm {

struct NegativeEntry {
  TokenId id;
  int count;  // occurrences in the window, >= 1

  friend bool operator==(const NegativeEntry&, const NegativeEntry&) = default;
};

/// Negative candidates for one position, sorted by id. pad/bos/eos and the
/// label never appear.
using NegativeSet = std::vector<NegativeEntry>;

/// Sum of multiplicities.
int total_count(const NegativeSet& negatives);

/// Distinct ids of labels[0..t-1] without labels[t] (each with count 1).
NegativeSet preceding_all(std::span<const TokenId> labels, std::size_t t);

/// Multiset of labels[max(0, t-M)..t-1] with every occurrence of labels[t] removed.
NegativeSet preceding_m(std::span<const TokenId> labels, std::size_t t, int window);

/// flags[t] is set iff the n-gram ending at t already ended at an earlier index.
std::vector<bool> repeated_ngram_candidates(std::span<const TokenId> sequence, int n = 4);

}  // namespace ctlm
