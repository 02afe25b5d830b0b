#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctlm/error.hpp"
#include "ctlm/negatives.hpp"
#include "ctlm/tensor.hpp"

namespace ctlm {

enum class Objective { kCe, kCeCt, kCeNce, kUlT, kUlTs };

Objective parse_objective(std::string_view name);
std::string_view to_string(Objective objective);

struct LossConfig {
  Objective objective = Objective::kCe;
  int ct_crop_length = 32;   // positions of each trunk that get the CT/NCE term
  int negative_window = 16;  // M
  int ul_seq_ngram = 4;
  double prob_clamp = 1e-12;

  /// crop = trunk/4 and M = trunk/8, rounded, at least 1.
  static LossConfig for_trunk(Objective objective, int trunk_length);
  void validate(int trunk_length) const;
};

struct LossReport {
  double total = 0.0;
  double ce_component = 0.0;
  double aux_component = 0.0;
  std::int64_t tokens_counted = 0;
};

// ---------------------------------------------------------------------------
// Per-step losses. Templated on the scalar so the finite-difference oracle can
// evaluate them in extended precision.

namespace detail {

inline void check_label(std::size_t vocab, TokenId label) {
  if (label < 0 || static_cast<std::size_t>(label) >= vocab) {
    throw RangeError("label " + std::to_string(label) + " outside vocabulary of size " +
                     std::to_string(vocab));
  }
}

inline void check_negatives(std::size_t vocab, TokenId label, const NegativeSet& negatives) {
  for (const auto& n : negatives) {
    if (n.id < 0 || static_cast<std::size_t>(n.id) >= vocab) {
      throw RangeError("negative id " + std::to_string(n.id) + " outside vocabulary");
    }
    if (n.id == label) throw ContractError("label token " + std::to_string(label) + " listed as a negative");
  }
}

template <class T>
T softplus(T x) {
  using std::exp;
  using std::log1p;
  return std::max(x, T(0)) + log1p(exp(-(x < 0 ? -x : x)));
}

}  // namespace detail

template <class T>
T log_sum_exp(std::span<const T> z) {
  using std::exp;
  using std::log;
  T m = -std::numeric_limits<T>::infinity();
  for (T v : z) m = std::max(m, v);
  T s = 0;
  for (T v : z) s += exp(v - m);
  return m + log(s);
}

template <class T>
std::vector<T> softmax(std::span<const T> z) {
  using std::exp;
  T m = -std::numeric_limits<T>::infinity();
  for (T v : z) m = std::max(m, v);
  std::vector<T> p(z.size());
  T s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = exp(z[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

/// -log softmax(z)[label].
template <class T>
T ce_step(std::span<const T> logits, TokenId label) {
  detail::check_label(logits.size(), label);
  const T loss = log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
  return std::max(loss, T(0));
}

/// -sum over negatives of log(1 - p), with 1 - p clamped below at `clamp`.
template <class T>
T ul_token_step(std::span<const T> probs, const NegativeSet& negatives, T clamp = T(1e-12)) {
  using std::log;
  T loss = 0;
  for (const auto& n : negatives) {
    if (n.id < 0 || static_cast<std::size_t>(n.id) >= probs.size()) {
      throw RangeError("negative id " + std::to_string(n.id) + " outside vocabulary");
    }
    const T q = std::max(T(1) - probs[static_cast<std::size_t>(n.id)], clamp);
    loss -= static_cast<T>(n.count) * log(q);
  }
  return loss;
}

/// log(1 + sum_neg count * exp(z_neg - z_pos)).
template <class T>
T ct_step(std::span<const T> logits, TokenId label, const NegativeSet& negatives) {
  using std::exp;
  using std::log;
  using std::log1p;
  detail::check_label(logits.size(), label);
  detail::check_negatives(logits.size(), label, negatives);
  if (negatives.empty()) return T(0);
  const T pos = logits[static_cast<std::size_t>(label)];
  T shift = 0;
  for (const auto& n : negatives) shift = std::max(shift, logits[static_cast<std::size_t>(n.id)] - pos);
  T sum = 0;
  for (const auto& n : negatives) {
    sum += static_cast<T>(n.count) * exp(logits[static_cast<std::size_t>(n.id)] - pos - shift);
  }
  if (shift == T(0)) return log1p(sum);
  return shift + log(exp(-shift) + sum);
}

/// -log sigmoid(z_pos) - (1/|S|) sum_neg log sigmoid(-z_neg), |S| counting multiplicity.
template <class T>
T nce_step(std::span<const T> logits, TokenId label, const NegativeSet& negatives) {
  detail::check_label(logits.size(), label);
  detail::check_negatives(logits.size(), label, negatives);
  T loss = detail::softplus(-logits[static_cast<std::size_t>(label)]);
  const int size = total_count(negatives);
  if (size == 0) return loss;
  T neg = 0;
  for (const auto& n : negatives) {
    neg += static_cast<T>(n.count) * detail::softplus(logits[static_cast<std::size_t>(n.id)]);
  }
  return loss + neg / static_cast<T>(size);
}

// ---------------------------------------------------------------------------
// Trunk-level objectives.

/// Loss over one trunk. Logit row r predicts tokens[r + 1]; `mask` has one entry
/// per token. CE is averaged over all valid rows, the CT/NCE term over valid rows
/// r < ct_crop_length, and UL-T over all valid rows. When `grad` is non-null it
/// receives dL/dZ with the same shape as `logits`.
LossReport sequence_loss(const Matrix& logits, std::span<const TokenId> tokens,
                         std::span<const std::uint8_t> mask, const LossConfig& config,
                         Matrix* grad = nullptr);

/// Same as sequence_loss but pooled over every row of a batch: rows
/// b*(width-1) .. (b+1)*(width-1)-1 of `logits` belong to sequence b.
LossReport batch_loss(const Matrix& logits, const SequenceBatch& batch, const LossConfig& config,
                      Matrix* grad = nullptr);

/// Sequence-level unlikelihood on a decoded sequence: each continuation token that
/// closes a repeated n-gram is penalized with -log(1 - p). Row r of `logits`
/// predicts sequence[r + 1]; continuation tokens start at `continuation_start`.
/// Averaged over the continuation length.
double ul_sequence_loss(const Matrix& logits, std::span<const TokenId> sequence,
                        std::size_t continuation_start, int ngram, double clamp,
                        Matrix* grad = nullptr);

}  // namespace ctlm
