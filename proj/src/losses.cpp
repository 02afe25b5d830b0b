#include "ctlm/losses.hpp"

#include <cmath>

#include "ctlm/corpus.hpp"
#include "ctlm/gradients.hpp"

namespace ctlm {

Objective parse_objective(std::string_view name) {
  if (name == "ce") return Objective::kCe;
  if (name == "ce+ct") return Objective::kCeCt;
  if (name == "ce+nce") return Objective::kCeNce;
  if (name == "ul-t") return Objective::kUlT;
  if (name == "ul-ts") return Objective::kUlTs;
  throw ConfigError("unknown objective '" + std::string(name) + "' (expected ce|ce+ct|ce+nce|ul-t|ul-ts)");
}

std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::kCe: return "ce";
    case Objective::kCeCt: return "ce+ct";
    case Objective::kCeNce: return "ce+nce";
    case Objective::kUlT: return "ul-t";
    case Objective::kUlTs: return "ul-ts";
  }
  return "?";
}

LossConfig LossConfig::for_trunk(Objective objective, int trunk_length) {
  LossConfig c;
  c.objective = objective;
  c.ct_crop_length = std::max(1, static_cast<int>(std::lround(trunk_length / 4.0)));
  c.negative_window = std::max(1, static_cast<int>(std::lround(trunk_length / 8.0)));
  return c;
}

void LossConfig::validate(int trunk_length) const {
  const bool contrastive = objective == Objective::kCeCt || objective == Objective::kCeNce;
  if (contrastive) {
    if (ct_crop_length < 1) throw ConfigError("ct_crop_length must be >= 1");
    if (ct_crop_length > trunk_length) throw ConfigError("ct_crop_length must not exceed the trunk length");
    if (negative_window < 1) throw ConfigError("negative window M must be >= 1");
  }
  if (ul_seq_ngram < 2) throw ConfigError("ul_seq_ngram must be >= 2");
  if (!(prob_clamp > 0.0 && prob_clamp < 1.0)) throw ConfigError("prob_clamp must lie in (0, 1)");
}

namespace {

bool row_valid(std::span<const std::uint8_t> mask, std::size_t r) { return mask[r] && mask[r + 1]; }

struct Counts {
  std::int64_t ce = 0;
  std::int64_t aux = 0;
};

bool has_aux(Objective o) { return o != Objective::kCe; }
bool is_cropped(Objective o) { return o == Objective::kCeCt || o == Objective::kCeNce; }

void count_rows(std::span<const std::uint8_t> mask, const LossConfig& config, Counts& counts) {
  for (std::size_t r = 0; r + 1 < mask.size(); ++r) {
    if (!row_valid(mask, r)) continue;
    ++counts.ce;
    if (!has_aux(config.objective)) continue;
    if (!is_cropped(config.objective) || r < static_cast<std::size_t>(config.ct_crop_length)) ++counts.aux;
  }
}

struct Sums {
  double ce = 0.0;
  double aux = 0.0;
};

void accumulate(const Matrix& logits, Eigen::Index row_offset, std::span<const TokenId> tokens,
                std::span<const std::uint8_t> mask, const LossConfig& config, const Counts& counts,
                Sums& sums, Matrix* grad) {
  const auto vocab = static_cast<std::size_t>(logits.cols());
  std::vector<double> z(vocab);
  std::vector<double> p(vocab);
  const double ce_scale = counts.ce > 0 ? 1.0 / static_cast<double>(counts.ce) : 0.0;
  const double aux_scale = counts.aux > 0 ? 1.0 / static_cast<double>(counts.aux) : 0.0;

  for (std::size_t r = 0; r + 1 < tokens.size(); ++r) {
    if (!row_valid(mask, r)) continue;
    const Eigen::Index row = row_offset + static_cast<Eigen::Index>(r);
    const TokenId label = tokens[r + 1];
    detail::check_label(vocab, label);
    for (std::size_t v = 0; v < vocab; ++v) z[v] = logits(row, static_cast<Eigen::Index>(v));

    const double lse = log_sum_exp(std::span<const double>(z));
    sums.ce += std::max(0.0, lse - z[static_cast<std::size_t>(label)]);
    for (std::size_t v = 0; v < vocab; ++v) p[v] = std::exp(z[v] - lse);
    if (grad) {
      for (std::size_t v = 0; v < vocab; ++v) {
        (*grad)(row, static_cast<Eigen::Index>(v)) += static_cast<float>(ce_scale * p[v]);
      }
      (*grad)(row, label) -= static_cast<float>(ce_scale);
    }

    const std::size_t t = r + 1;
    switch (config.objective) {
      case Objective::kCe:
        break;
      case Objective::kCeCt:
      case Objective::kCeNce: {
        if (r >= static_cast<std::size_t>(config.ct_crop_length)) break;
        const NegativeSet negatives = preceding_m(tokens, t, config.negative_window);
        const bool ct = config.objective == Objective::kCeCt;
        sums.aux += ct ? ct_step(std::span<const double>(z), label, negatives)
                       : nce_step(std::span<const double>(z), label, negatives);
        if (grad) {
          const GradRow g = ct ? grad_ct(z, label, negatives) : grad_nce(z, label, negatives);
          (*grad)(row, label) += static_cast<float>(aux_scale * g[static_cast<std::size_t>(label)]);
          for (const auto& n : negatives) {
            (*grad)(row, n.id) += static_cast<float>(aux_scale * g[static_cast<std::size_t>(n.id)]);
          }
        }
        break;
      }
      case Objective::kUlT:
      case Objective::kUlTs: {
        const NegativeSet negatives = preceding_all(tokens, t);
        if (negatives.empty()) break;
        sums.aux += ul_token_step(std::span<const double>(p), negatives, config.prob_clamp);
        if (grad) {
          const GradRow g = grad_ul(z, negatives, config.prob_clamp);
          for (std::size_t v = 0; v < vocab; ++v) {
            (*grad)(row, static_cast<Eigen::Index>(v)) += static_cast<float>(aux_scale * g[v]);
          }
        }
        break;
      }
    }
  }
}

LossReport finish(const Sums& sums, const Counts& counts) {
  if (counts.ce == 0) throw ContractError("no tokens counted");
  LossReport r;
  r.tokens_counted = counts.ce;
  r.ce_component = sums.ce / static_cast<double>(counts.ce);
  r.aux_component = counts.aux > 0 ? sums.aux / static_cast<double>(counts.aux) : 0.0;
  r.total = r.ce_component + r.aux_component;
  if (!std::isfinite(r.total)) throw TrainingError("non-finite loss");
  return r;
}

void prepare_grad(const Matrix& logits, Matrix* grad) {
  if (grad) grad->setZero(logits.rows(), logits.cols());
}

}  // namespace

LossReport sequence_loss(const Matrix& logits, std::span<const TokenId> tokens,
                         std::span<const std::uint8_t> mask, const LossConfig& config, Matrix* grad) {
  if (tokens.size() != mask.size()) throw ContractError("tokens and mask lengths differ");
  if (tokens.size() < 2 || logits.rows() != static_cast<Eigen::Index>(tokens.size() - 1)) {
    throw ContractError("logit rows must equal sequence length - 1");
  }
  Counts counts;
  count_rows(mask, config, counts);
  Sums sums;
  prepare_grad(logits, grad);
  if (counts.ce == 0) throw ContractError("no tokens counted");
  accumulate(logits, 0, tokens, mask, config, counts, sums, grad);
  return finish(sums, counts);
}

LossReport batch_loss(const Matrix& logits, const SequenceBatch& batch, const LossConfig& config,
                      Matrix* grad) {
  if (batch.width < 2) throw ContractError("batch rows need at least two tokens");
  const Eigen::Index rows_per_seq = batch.width - 1;
  if (logits.rows() != rows_per_seq * batch.batch) {
    throw ContractError("logit rows (" + std::to_string(logits.rows()) + ") do not match batch shape " +
                        std::to_string(batch.batch) + "x" + std::to_string(rows_per_seq));
  }
  Counts counts;
  for (int b = 0; b < batch.batch; ++b) count_rows(batch.mask_row(b), config, counts);
  if (counts.ce == 0) throw ContractError("no tokens counted");
  Sums sums;
  prepare_grad(logits, grad);
  for (int b = 0; b < batch.batch; ++b) {
    accumulate(logits, b * rows_per_seq, batch.row(b), batch.mask_row(b), config, counts, sums, grad);
  }
  return finish(sums, counts);
}

double ul_sequence_loss(const Matrix& logits, std::span<const TokenId> sequence,
                        std::size_t continuation_start, int ngram, double clamp, Matrix* grad) {
  if (sequence.size() < 2 || logits.rows() != static_cast<Eigen::Index>(sequence.size() - 1)) {
    throw ContractError("logit rows must equal sequence length - 1");
  }
  if (continuation_start < 1 || continuation_start >= sequence.size()) {
    throw ContractError("continuation must start after the first token and before the end");
  }
  prepare_grad(logits, grad);
  const auto continuation = sequence.subspan(continuation_start);
  const auto flags = repeated_ngram_candidates(continuation, ngram);
  const double scale = 1.0 / static_cast<double>(continuation.size());
  const auto vocab = static_cast<std::size_t>(logits.cols());
  std::vector<double> z(vocab);
  double loss = 0.0;
  for (std::size_t i = 0; i < continuation.size(); ++i) {
    if (!flags[i] || Vocabulary::is_structural(continuation[i])) continue;
    const auto row = static_cast<Eigen::Index>(continuation_start + i - 1);
    for (std::size_t v = 0; v < vocab; ++v) z[v] = logits(row, static_cast<Eigen::Index>(v));
    const NegativeSet negatives = {{continuation[i], 1}};
    const auto p = softmax(std::span<const double>(z));
    loss += ul_token_step(std::span<const double>(p), negatives, clamp);
    if (grad) {
      const GradRow g = grad_ul(z, negatives, clamp);
      for (std::size_t v = 0; v < vocab; ++v) {
        (*grad)(row, static_cast<Eigen::Index>(v)) += static_cast<float>(scale * g[v]);
      }
    }
  }
  return loss * scale;
}

}  // namespace ctlm
