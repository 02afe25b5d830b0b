#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctlm/model.hpp"

namespace ctlm {

struct NgramCounts {
  std::int64_t repeated = 0;  // total - distinct
  std::int64_t total = 0;
};

NgramCounts ngram_counts(std::span<const TokenId> seq, int n);

/// 1 - distinct/total n-grams of one sequence; 0 when it has no n-grams.
double rep_n(std::span<const TokenId> seq, int n);

/// Pooled repeated / pooled total n-grams. Throws InputError when there are none.
double micro_rep_n(const std::vector<std::vector<TokenId>>& sequences, int n);

double dist_1(const std::vector<std::vector<TokenId>>& sequences);
std::int64_t uniq_1(const std::vector<std::vector<TokenId>>& sequences);

/// Drops pad, bos and eos. Unknown-word tokens are kept.
std::vector<TokenId> strip_structural(std::span<const TokenId> seq);

/// exp of the mean next-token cross-entropy over non-overlapping windows of
/// `window` tokens taken from each sequence (the first token of a window is
/// context only; a trailing window of at least two tokens is kept).
double perplexity(const ModelState& state, const std::vector<std::vector<TokenId>>& sequences, int window);

inline constexpr int kHistogramBins = 5;
using Histogram = std::array<std::int64_t, kHistogramBins>;

/// Equal-width bins over [0, 1]; the last bin is closed.
Histogram histogram(std::span<const double> values);

/// H(a, b) = p(ids[start + b] | ids[< start + a]) for b <= a, 0 above the
/// diagonal. The diagonal holds each token's own probability.
Matrix prob_heatmap(const ModelState& state, std::span<const TokenId> ids, std::size_t start = 1);

/// Element-wise mean after truncating every matrix to the smallest size.
Matrix average_heatmaps(const std::vector<Matrix>& maps);

struct MetricsReport {
  std::string name;
  std::array<double, 4> rep{};  // micro rep-1..4
  double dist_1 = 0.0;
  std::int64_t uniq_1 = 0;
  std::optional<double> ppl;
  std::optional<double> ppl_s;
  std::map<std::string, Histogram> histograms;  // per-continuation rep-n
  Matrix heatmap;
  int heatmap_instances = 0;
  int continuations = 0;
  std::int64_t total_tokens = 0;
  int diagnostics = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  /// One header line and one value line.
  std::string to_csv() const;
};

/// rep, dist-1, uniq-1 and the histograms of a set of continuations.
MetricsReport continuation_metrics(const std::vector<std::vector<TokenId>>& continuations);

std::string histograms_csv(const MetricsReport& report);
/// Upper-triangle cells are left empty.
std::string heatmap_csv(const Matrix& heatmap);

}  // namespace ctlm
