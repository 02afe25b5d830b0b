#include "ctlm/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ctlm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct SignTally {
  int violations = 0;
  int suppressed = 0;
  int promoted = 0;
  int irrelevant_nonzero = 0;
  std::vector<std::string> failures;

  void fail(int trial, const std::string& what) {
    ++violations;
    if (failures.size() < 10) failures.push_back("trial " + std::to_string(trial) + ": " + what);
  }
};

void check_signs(LossKind kind, const GradCase& c, const GradRow& g, int trial, SignTally& tally) {
  const auto v_size = g.size();
  std::vector<bool> negative(v_size, false);
  for (const auto& n : c.negatives) negative[static_cast<std::size_t>(n.id)] = true;
  const auto label = static_cast<std::size_t>(c.label);
  auto entry = [&](std::size_t v) { return "entry " + std::to_string(v) + " = " + std::to_string(g[v]); };

  switch (kind) {
    case LossKind::kCe:
      if (g[label] > 0) tally.fail(trial, "CE label grad must be <= 0, " + entry(label));
      for (std::size_t v = 0; v < v_size; ++v) {
        if (v != label && g[v] < 0) tally.fail(trial, "CE non-label grad must be >= 0, " + entry(v));
      }
      break;
    case LossKind::kCt:
    case LossKind::kNce: {
      const char* name = kind == LossKind::kCt ? "CT" : "NCE";
      if (g[label] > 0) tally.fail(trial, std::string(name) + " positive grad must be <= 0, " + entry(label));
      for (std::size_t v = 0; v < v_size; ++v) {
        if (v == label) continue;
        if (negative[v] && g[v] < 0) tally.fail(trial, std::string(name) + " negative grad must be >= 0, " + entry(v));
        if (!negative[v] && g[v] != 0.0) {
          ++tally.irrelevant_nonzero;
          tally.fail(trial, std::string(name) + " irrelevant grad must be exactly 0, " + entry(v));
        }
      }
      break;
    }
    case LossKind::kUl:
      for (std::size_t v = 0; v < v_size; ++v) {
        if (negative[v]) {
          if (g[v] > 0) ++tally.suppressed;
          if (g[v] < 0) ++tally.promoted;
        } else if (g[v] > 0) {
          tally.fail(trial, "UL non-negative token grad must be <= 0, " + entry(v));
        }
      }
      break;
  }
}

/// p = (0.6, 0.2, 0.2), negatives {0, 1}, label 2: the second negative is promoted.
GradCase ul_sign_flip_witness() {
  GradCase c;
  c.logits = {std::log(0.6), std::log(0.2), std::log(0.2)};
  c.label = 2;
  c.negatives = {{0, 1}, {1, 1}};
  return c;
}

}  // namespace

GradRow grad_ce(std::span<const double> logits, TokenId label) {
  detail::check_label(logits.size(), label);
  GradRow g = softmax(logits);
  g[static_cast<std::size_t>(label)] -= 1.0;
  return g;
}

GradRow grad_ul(std::span<const double> logits, const NegativeSet& negatives, double clamp) {
  GradRow g(logits.size(), 0.0);
  if (negatives.empty()) return g;
  const auto p = softmax(logits);
  // ratio[n] = c_n p_n / (1 - p_n) for every unclamped negative.
  std::vector<double> ratio(negatives.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const auto id = negatives[i].id;
    if (id < 0 || static_cast<std::size_t>(id) >= logits.size()) {
      throw RangeError("negative id " + std::to_string(id) + " outside vocabulary");
    }
    const double q = 1.0 - p[static_cast<std::size_t>(id)];
    if (q <= clamp) continue;
    ratio[i] = negatives[i].count * p[static_cast<std::size_t>(id)] / q;
    total += ratio[i];
  }
  for (std::size_t v = 0; v < g.size(); ++v) g[v] = -p[v] * total;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const auto v = static_cast<std::size_t>(negatives[i].id);
    if (1.0 - p[v] <= clamp) continue;
    g[v] = p[v] * (negatives[i].count - (total - ratio[i]));
  }
  return g;
}

GradRow grad_ct(std::span<const double> logits, TokenId label, const NegativeSet& negatives) {
  detail::check_label(logits.size(), label);
  detail::check_negatives(logits.size(), label, negatives);
  GradRow g(logits.size(), 0.0);
  if (negatives.empty()) return g;
  const double pos = logits[static_cast<std::size_t>(label)];
  double shift = 0.0;
  for (const auto& n : negatives) shift = std::max(shift, logits[static_cast<std::size_t>(n.id)] - pos);
  double sum = 0.0;
  for (const auto& n : negatives) {
    const double w = n.count * std::exp(logits[static_cast<std::size_t>(n.id)] - pos - shift);
    g[static_cast<std::size_t>(n.id)] = w;
    sum += w;
  }
  const double denom = std::exp(-shift) + sum;
  for (const auto& n : negatives) g[static_cast<std::size_t>(n.id)] /= denom;
  g[static_cast<std::size_t>(label)] = -sum / denom;
  return g;
}

GradRow grad_nce(std::span<const double> logits, TokenId label, const NegativeSet& negatives) {
  detail::check_label(logits.size(), label);
  detail::check_negatives(logits.size(), label, negatives);
  GradRow g(logits.size(), 0.0);
  // d/dz softplus(-z) = -sigmoid(-z); d/dz softplus(z) = sigmoid(z).
  g[static_cast<std::size_t>(label)] = -sigmoid(-logits[static_cast<std::size_t>(label)]);
  const int size = total_count(negatives);
  for (const auto& n : negatives) {
    g[static_cast<std::size_t>(n.id)] =
        static_cast<double>(n.count) / size * sigmoid(logits[static_cast<std::size_t>(n.id)]);
  }
  return g;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "ce") return LossKind::kCe;
  if (name == "ul" || name == "ul-t") return LossKind::kUl;
  if (name == "ct") return LossKind::kCt;
  if (name == "nce") return LossKind::kNce;
  throw ConfigError("unknown loss '" + std::string(name) + "' (expected ce|ul|ct|nce)");
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kCe: return "ce";
    case LossKind::kUl: return "ul";
    case LossKind::kCt: return "ct";
    case LossKind::kNce: return "nce";
  }
  return "?";
}

GradCase random_grad_case(LossKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_int_distribution<int> vocab_dist(3, 50);
  std::normal_distribution<double> logit_dist(0.0, 2.0);
  GradCase c;
  const int vocab = vocab_dist(rng);
  c.logits.resize(static_cast<std::size_t>(vocab));
  for (auto& z : c.logits) z = logit_dist(rng);
  c.label = std::uniform_int_distribution<int>(0, vocab - 1)(rng);

  std::vector<TokenId> others;
  for (int v = 0; v < vocab; ++v) {
    if (v != c.label) others.push_back(v);
  }
  std::shuffle(others.begin(), others.end(), rng);
  const int max_neg = std::min<int>(8, static_cast<int>(others.size()));
  const int n_neg = std::uniform_int_distribution<int>(0, max_neg)(rng);
  std::uniform_int_distribution<int> mult_dist(1, 3);
  for (int i = 0; i < n_neg; ++i) {
    const int count = kind == LossKind::kUl ? 1 : mult_dist(rng);
    c.negatives.push_back({others[static_cast<std::size_t>(i)], count});
  }
  std::sort(c.negatives.begin(), c.negatives.end(),
            [](const NegativeEntry& a, const NegativeEntry& b) { return a.id < b.id; });
  return c;
}

GradRow analytic_grad(LossKind kind, const GradCase& c) {
  switch (kind) {
    case LossKind::kCe: return grad_ce(c.logits, c.label);
    case LossKind::kUl: return grad_ul(c.logits, c.negatives);
    case LossKind::kCt: return grad_ct(c.logits, c.label, c.negatives);
    case LossKind::kNce: return grad_nce(c.logits, c.label, c.negatives);
  }
  throw ConfigError("unknown loss kind");
}

long double loss_value(LossKind kind, const GradCase& c, std::span<const long double> z) {
  switch (kind) {
    case LossKind::kCe: return ce_step(z, c.label);
    case LossKind::kUl: {
      const auto p = softmax(z);
      return ul_token_step(std::span<const long double>(p), c.negatives, 1e-12L);
    }
    case LossKind::kCt: return ct_step(z, c.label, c.negatives);
    case LossKind::kNce: return nce_step(z, c.label, c.negatives);
  }
  throw ConfigError("unknown loss kind");
}

bool InfluenceReport::ok() const {
  if (violations != 0 || trials < 1) return false;
  if (kind == LossKind::kUl) return ul_suppressed_negatives > 0 && ul_promoted_negatives > 0;
  return true;
}

InfluenceReport influence_matrix_check(LossKind kind, int trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("influence check needs at least one trial");
  SignTally tally;
  for (int t = 0; t < trials; ++t) {
    const GradCase c = (kind == LossKind::kUl && t == 0)
                           ? ul_sign_flip_witness()
                           : random_grad_case(kind, seed * 1000003ULL + static_cast<std::uint64_t>(t));
    check_signs(kind, c, analytic_grad(kind, c), t, tally);
  }
  InfluenceReport r;
  r.kind = kind;
  r.trials = trials;
  r.violations = tally.violations;
  r.failures = std::move(tally.failures);
  r.ul_suppressed_negatives = tally.suppressed;
  r.ul_promoted_negatives = tally.promoted;
  r.irrelevant_nonzero = tally.irrelevant_nonzero;
  return r;
}

GradcheckReport gradcheck(LossKind kind, int trials, std::uint64_t seed, double h) {
  if (trials < 1) throw ConfigError("gradcheck needs at least one trial");
  GradcheckReport r;
  r.kind = kind;
  r.trials = trials;
  SignTally tally;
  for (int t = 0; t < trials; ++t) {
    const GradCase c = random_grad_case(kind, seed * 1000003ULL + static_cast<std::uint64_t>(t));
    const GradRow analytic = analytic_grad(kind, c);
    const GradRow numeric =
        finite_diff_grad([&](std::span<const long double> z) { return loss_value(kind, c, z); }, c.logits, h);
    for (std::size_t v = 0; v < analytic.size(); ++v) {
      if (std::abs(analytic[v]) < 1e-10 && std::abs(numeric[v]) < 1e-10) continue;
      r.max_rel_err = std::max(r.max_rel_err, relative_error(analytic[v], numeric[v]));
    }
    check_signs(kind, c, analytic, t, tally);
  }
  r.sign_violations = tally.violations;
  return r;
}

}  // namespace ctlm
