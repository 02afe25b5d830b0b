#include "ctlm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "ctlm/corpus.hpp"
#include "ctlm/error.hpp"
#include "ctlm/losses.hpp"

namespace ctlm {

namespace {

struct PooledLoss {
  double sum = 0.0;
  std::int64_t count = 0;
};

void score_windows(const ModelState& state, const std::vector<std::vector<TokenId>>& windows, PooledLoss& pooled) {
  constexpr std::size_t kBatch = 8;
  const auto vocab = static_cast<std::size_t>(state.config().vocab_size);
  std::vector<double> z(vocab);
  for (std::size_t start = 0; start < windows.size(); start += kBatch) {
    const std::size_t end = std::min(windows.size(), start + kBatch);
    std::vector<std::vector<TokenId>> group(windows.begin() + static_cast<std::ptrdiff_t>(start),
                                            windows.begin() + static_cast<std::ptrdiff_t>(end));
    const SequenceBatch batch = SequenceBatch::from_sequences(group, Vocabulary::kPad);
    const Matrix logits = forward(state, batch.inputs()).logits;
    const auto rows = static_cast<std::size_t>(batch.width - 1);
    for (std::size_t b = 0; b < group.size(); ++b) {
      for (std::size_t t = 0; t + 1 < group[b].size(); ++t) {
        const auto row = static_cast<Eigen::Index>(b * rows + t);
        for (std::size_t v = 0; v < vocab; ++v) z[v] = logits(row, static_cast<Eigen::Index>(v));
        pooled.sum += ce_step(std::span<const double>(z), group[b][t + 1]);
        ++pooled.count;
      }
    }
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c <= r && c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = rows.at(static_cast<std::size_t>(r));
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(row.size()); ++c) {
      m(r, c) = row.at(static_cast<std::size_t>(c)).get<float>();
    }
  }
  return m;
}

}  // namespace

NgramCounts ngram_counts(std::span<const TokenId> seq, int n) {
  if (n < 1) throw ConfigError("n-gram order must be >= 1");
  NgramCounts c;
  const auto un = static_cast<std::size_t>(n);
  if (seq.size() < un) return c;
  std::set<std::vector<TokenId>> distinct;
  for (std::size_t i = 0; i + un <= seq.size(); ++i) {
    distinct.emplace(seq.begin() + static_cast<std::ptrdiff_t>(i), seq.begin() + static_cast<std::ptrdiff_t>(i + un));
  }
  c.total = static_cast<std::int64_t>(seq.size() - un + 1);
  c.repeated = c.total - static_cast<std::int64_t>(distinct.size());
  return c;
}

double rep_n(std::span<const TokenId> seq, int n) {
  const auto c = ngram_counts(seq, n);
  return c.total == 0 ? 0.0 : static_cast<double>(c.repeated) / static_cast<double>(c.total);
}

double micro_rep_n(const std::vector<std::vector<TokenId>>& sequences, int n) {
  NgramCounts pooled;
  for (const auto& s : sequences) {
    const auto c = ngram_counts(s, n);
    pooled.repeated += c.repeated;
    pooled.total += c.total;
  }
  if (pooled.total == 0) throw InputError("no n-grams");
  return static_cast<double>(pooled.repeated) / static_cast<double>(pooled.total);
}

std::int64_t uniq_1(const std::vector<std::vector<TokenId>>& sequences) {
  std::set<TokenId> distinct;
  for (const auto& s : sequences) distinct.insert(s.begin(), s.end());
  return static_cast<std::int64_t>(distinct.size());
}

double dist_1(const std::vector<std::vector<TokenId>>& sequences) {
  std::int64_t total = 0;
  for (const auto& s : sequences) total += static_cast<std::int64_t>(s.size());
  if (total == 0) throw InputError("no tokens");
  return static_cast<double>(uniq_1(sequences)) / static_cast<double>(total);
}

std::vector<TokenId> strip_structural(std::span<const TokenId> seq) {
  std::vector<TokenId> out;
  for (TokenId t : seq) {
    if (!Vocabulary::is_structural(t)) out.push_back(t);
  }
  return out;
}

double perplexity(const ModelState& state, const std::vector<std::vector<TokenId>>& sequences, int window) {
  if (window < 2) throw ConfigError("perplexity window must be >= 2");
  if (window > state.config().max_positions + 1) throw RangeError("perplexity window exceeds max_positions + 1");
  std::vector<std::vector<TokenId>> windows;
  for (const auto& s : sequences) {
    for (auto& w : chunk(s, window)) windows.push_back(std::move(w));
  }
  PooledLoss pooled;
  score_windows(state, windows, pooled);
  if (pooled.count == 0) throw InputError("no scorable tokens for perplexity");
  return std::exp(pooled.sum / static_cast<double>(pooled.count));
}

Histogram histogram(std::span<const double> values) {
  Histogram h{};
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw RangeError("histogram value " + fmt(v) + " outside [0, 1]");
    const int bin = std::min(kHistogramBins - 1, static_cast<int>(std::floor(v * kHistogramBins)));
    ++h[static_cast<std::size_t>(bin)];
  }
  return h;
}

Matrix prob_heatmap(const ModelState& state, std::span<const TokenId> ids, std::size_t start) {
  if (ids.size() < 2) throw InputError("heat map needs at least two tokens");
  if (start < 1 || start >= ids.size()) throw RangeError("heat map start must lie in [1, length)");
  const SequenceBatch inputs =
      SequenceBatch::from_sequences({std::vector<TokenId>(ids.begin(), ids.end() - 1)}, Vocabulary::kPad);
  const Matrix logits = forward(state, inputs).logits;
  const auto n = static_cast<Eigen::Index>(ids.size() - start);
  const auto vocab = static_cast<std::size_t>(logits.cols());
  Matrix h = Matrix::Zero(n, n);
  std::vector<double> z(vocab);
  for (Eigen::Index a = 0; a < n; ++a) {
    // Row start + a - 1 holds the distribution over position start + a.
    const Eigen::Index row = static_cast<Eigen::Index>(start) + a - 1;
    for (std::size_t v = 0; v < vocab; ++v) z[v] = logits(row, static_cast<Eigen::Index>(v));
    const auto p = softmax(std::span<const double>(z));
    for (Eigen::Index b = 0; b <= a; ++b) {
      h(a, b) = static_cast<float>(p[static_cast<std::size_t>(ids[start + static_cast<std::size_t>(b)])]);
    }
  }
  return h;
}

Matrix average_heatmaps(const std::vector<Matrix>& maps) {
  if (maps.empty()) return {};
  Eigen::Index n = maps.front().rows();
  for (const auto& m : maps) n = std::min(n, m.rows());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  for (const auto& m : maps) acc += m.topLeftCorner(n, n).cast<double>();
  acc /= static_cast<double>(maps.size());
  return acc.cast<float>();
}

MetricsReport continuation_metrics(const std::vector<std::vector<TokenId>>& continuations) {
  MetricsReport r;
  r.continuations = static_cast<int>(continuations.size());
  for (const auto& c : continuations) r.total_tokens += static_cast<std::int64_t>(c.size());
  for (int n = 1; n <= 4; ++n) {
    r.rep[static_cast<std::size_t>(n - 1)] = micro_rep_n(continuations, n);
    std::vector<double> per_sequence;
    for (const auto& c : continuations) per_sequence.push_back(rep_n(c, n));
    r.histograms["rep_" + std::to_string(n)] = histogram(per_sequence);
  }
  r.dist_1 = dist_1(continuations);
  r.uniq_1 = uniq_1(continuations);
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  for (int n = 1; n <= 4; ++n) j["rep_" + std::to_string(n)] = rep[static_cast<std::size_t>(n - 1)];
  j["dist_1"] = dist_1;
  j["uniq_1"] = uniq_1;
  j["ppl"] = ppl ? nlohmann::json(*ppl) : nlohmann::json(nullptr);
  j["ppl_s"] = ppl_s ? nlohmann::json(*ppl_s) : nlohmann::json(nullptr);
  j["continuations"] = continuations;
  j["total_tokens"] = total_tokens;
  j["diagnostics"] = diagnostics;
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [k, h] : histograms) hist[k] = h;
  j["histograms"] = hist;
  j["heatmap_instances"] = heatmap_instances;
  j["heatmap"] = matrix_json(heatmap);
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.name = j.value("name", "");
  for (int n = 1; n <= 4; ++n) r.rep[static_cast<std::size_t>(n - 1)] = j.at("rep_" + std::to_string(n)).get<double>();
  r.dist_1 = j.at("dist_1").get<double>();
  r.uniq_1 = j.at("uniq_1").get<std::int64_t>();
  if (j.contains("ppl") && !j["ppl"].is_null()) r.ppl = j["ppl"].get<double>();
  if (j.contains("ppl_s") && !j["ppl_s"].is_null()) r.ppl_s = j["ppl_s"].get<double>();
  r.continuations = j.value("continuations", 0);
  r.total_tokens = j.value("total_tokens", std::int64_t{0});
  r.diagnostics = j.value("diagnostics", 0);
  if (j.contains("histograms")) {
    for (const auto& [k, v] : j["histograms"].items()) r.histograms[k] = v.get<Histogram>();
  }
  r.heatmap_instances = j.value("heatmap_instances", 0);
  if (j.contains("heatmap")) r.heatmap = matrix_from_json(j["heatmap"]);
  return r;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "name,rep_1,rep_2,rep_3,rep_4,dist_1,uniq_1,ppl,ppl_s,continuations,total_tokens\n";
  os << name;
  for (double v : rep) os << ',' << fmt(v);
  os << ',' << fmt(dist_1) << ',' << uniq_1 << ',' << (ppl ? fmt(*ppl) : "") << ',' << (ppl_s ? fmt(*ppl_s) : "")
     << ',' << continuations << ',' << total_tokens << '\n';
  return os.str();
}

std::string histograms_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "metric,bin_0.0,bin_0.2,bin_0.4,bin_0.6,bin_0.8\n";
  for (const auto& [k, h] : report.histograms) {
    os << k;
    for (auto c : h) os << ',' << c;
    os << '\n';
  }
  return os.str();
}

std::string heatmap_csv(const Matrix& heatmap) {
  std::ostringstream os;
  for (Eigen::Index r = 0; r < heatmap.rows(); ++r) {
    for (Eigen::Index c = 0; c < heatmap.cols(); ++c) {
      if (c > 0) os << ',';
      if (c <= r) os << fmt(heatmap(r, c));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace ctlm
