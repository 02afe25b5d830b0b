#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctlm/error.hpp"
#include "ctlm/losses.hpp"
#include "ctlm/negatives.hpp"

namespace ctlm {

/// dL/dz over the vocabulary for one position.
using GradRow = std::vector<double>;

/// softmax(z) - onehot(label).
GradRow grad_ce(std::span<const double> logits, TokenId label);

/// Token-level unlikelihood. Negatives get p_n (1 - sum_{n' != n} p_n'/(1 - p_n'));
/// every other entry gets sum_n p_v p_n / (p_n - 1). Terms whose 1 - p is clamped
/// contribute nothing, matching the clamped loss.
GradRow grad_ul(std::span<const double> logits, const NegativeSet& negatives, double clamp = 1e-12);

/// Contrastive token loss. Entries outside {label} and the negatives are exactly 0.
GradRow grad_ct(std::span<const double> logits, TokenId label, const NegativeSet& negatives);

/// Token-level NCE, with the 1/|S| averaging applied to negative entries.
GradRow grad_nce(std::span<const double> logits, TokenId label, const NegativeSet& negatives);

/// Central differences (L(z + h e_v) - L(z - h e_v)) / 2h for every v. The loss is
/// evaluated in `Scalar` (extended precision by default).
template <class Scalar = long double, class Loss>
GradRow finite_diff_grad(Loss&& loss, std::span<const double> logits, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  std::vector<Scalar> z(logits.begin(), logits.end());
  GradRow out(z.size());
  const Scalar step = static_cast<Scalar>(h);
  for (std::size_t v = 0; v < z.size(); ++v) {
    const Scalar saved = z[v];
    z[v] = saved + step;
    const Scalar up = loss(std::span<const Scalar>(z));
    z[v] = saved - step;
    const Scalar down = loss(std::span<const Scalar>(z));
    z[v] = saved;
    out[v] = static_cast<double>((up - down) / (Scalar(2) * step));
  }
  return out;
}

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

enum class LossKind { kCe, kUl, kCt, kNce };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

/// One random logit row with a label and negatives.
struct GradCase {
  std::vector<double> logits;
  TokenId label = 0;
  NegativeSet negatives;
};

/// V in [3, 50], logits ~ N(0, 2^2), up to 8 negatives excluding the label;
/// multiplicities up to 3 for CT/NCE, 1 for UL.
GradCase random_grad_case(LossKind kind, std::uint64_t seed);

/// Analytic gradient of `kind` for a case.
GradRow analytic_grad(LossKind kind, const GradCase& c);

/// The loss of `kind` evaluated at `logits` in extended precision.
long double loss_value(LossKind kind, const GradCase& c, std::span<const long double> logits);

struct InfluenceReport {
  LossKind kind = LossKind::kCe;
  int trials = 0;
  int violations = 0;
  std::vector<std::string> failures;  // first few violated inequalities, naming the trial
  int ul_suppressed_negatives = 0;    // negative-token grads > 0
  int ul_promoted_negatives = 0;      // negative-token grads < 0
  int irrelevant_nonzero = 0;         // CT/NCE entries outside label/negatives that are not exactly 0

  bool ok() const;
};

/// Checks the sign pattern of each objective's gradient on random rows:
/// CE promotes the label and suppresses everything else; CT and NCE promote the
/// label, suppress negatives and leave the rest at exactly 0; UL promotes every
/// non-negative token while its negatives go either way. The UL run includes a
/// constructed case where a negative token is promoted.
InfluenceReport influence_matrix_check(LossKind kind, int trials, std::uint64_t seed = 1);

struct GradcheckReport {
  LossKind kind = LossKind::kCe;
  int trials = 0;
  double max_rel_err = 0.0;
  int sign_violations = 0;
};

/// Compares analytic gradients with the finite-difference oracle on random cases,
/// skipping entries where both values are below 1e-10 in magnitude.
GradcheckReport gradcheck(LossKind kind, int trials, std::uint64_t seed = 1, double h = 1e-4);

}  // namespace ctlm
