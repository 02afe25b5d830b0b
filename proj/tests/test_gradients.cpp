#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ctlm/error.hpp"
#include "ctlm/gradients.hpp"

namespace ctlm {
namespace {

using Row = std::vector<double>;

TEST(GradCe, Examples) {
  const auto g = grad_ce(Row{0, 0}, 0);
  EXPECT_NEAR(g[0], -0.5, 1e-15);
  EXPECT_NEAR(g[1], 0.5, 1e-15);
  const auto sat = grad_ce(Row{60, 0, 0}, 0);
  for (double v : sat) EXPECT_NEAR(v, 0.0, 1e-25);
  EXPECT_THROW(grad_ce(Row{0, 0}, 2), RangeError);
}

TEST(GradUl, Examples) {
  const auto g = grad_ul(Row{0, 0, 0}, {{1, 1}, {2, 1}});
  EXPECT_NEAR(g[1], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(g[2], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(g[0], -1.0 / 3.0, 1e-15);

  const auto w = grad_ul(Row{std::log(0.6), std::log(0.2), std::log(0.2)}, {{0, 1}, {1, 1}});
  EXPECT_NEAR(w[1], 0.2 * (1.0 - 1.5), 1e-14);
  EXPECT_LT(w[1], 0.0);
  EXPECT_GT(w[0], 0.0);

  for (double v : grad_ul(Row{1, 2, 3}, {})) EXPECT_EQ(v, 0.0);
}

TEST(GradUl, ClampedNegativeContributesNothing) {
  // p_0 rounds to 1 in double, so 1 - p_0 sits below the clamp.
  const auto g = grad_ul(Row{100, 0, 0}, {{0, 1}});
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(GradCt, Examples) {
  const auto g = grad_ct(Row{0.4, 0.4, -3}, 0, {{1, 1}});
  EXPECT_NEAR(g[0], -0.5, 1e-15);
  EXPECT_NEAR(g[1], 0.5, 1e-15);
  EXPECT_EQ(g[2], 0.0);
  for (double v : grad_ct(Row{1, 2, 3}, 0, {})) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(grad_ct(Row{0, 0}, 0, {{0, 1}}), ContractError);
}

TEST(GradCt, MultiplicityScalesNegativeEntry) {
  const auto g = grad_ct(Row{0, 0, 0}, 0, {{1, 2}, {2, 1}});
  EXPECT_NEAR(g[1], 0.5, 1e-15);
  EXPECT_NEAR(g[2], 0.25, 1e-15);
  EXPECT_NEAR(g[0], -0.75, 1e-15);
}

// The derivative of softplus(-z) is -sigmoid(-z), which is -1/2 at z = 0.
TEST(GradNce, ZeroLogits) {
  const auto g = grad_nce(Row{0, 0, 0}, 0, {{1, 1}});
  EXPECT_NEAR(g[0], -0.5, 1e-15);
  EXPECT_NEAR(g[1], 0.5, 1e-15);
  EXPECT_EQ(g[2], 0.0);
}

TEST(GradNce, AveragingAppliesToNegatives) {
  const auto g = grad_nce(Row{0, 0, 0, 0}, 0, {{1, 2}, {2, 1}});
  EXPECT_NEAR(g[1], 2.0 / 3.0 * 0.5, 1e-15);
  EXPECT_NEAR(g[2], 1.0 / 3.0 * 0.5, 1e-15);
  EXPECT_EQ(g[3], 0.0);
}

TEST(GradNce, AgreesWithFiniteDifferencesAtZero) {
  const GradCase c{{0, 0, 0}, 0, {{1, 1}}};
  const auto numeric = finite_diff_grad(
      [&](std::span<const long double> z) { return loss_value(LossKind::kNce, c, z); }, c.logits, 1e-4);
  const auto analytic = grad_nce(c.logits, 0, c.negatives);
  for (std::size_t v = 0; v < 3; ++v) EXPECT_NEAR(analytic[v], numeric[v], 1e-10);
}

TEST(GradRows, SumsAndShiftInvariance) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const GradCase c = random_grad_case(LossKind::kCt, static_cast<std::uint64_t>(trial));
    const auto gce = grad_ce(c.logits, c.label);
    EXPECT_NEAR(std::accumulate(gce.begin(), gce.end(), 0.0), 0.0, 1e-12);
    const auto gct = grad_ct(c.logits, c.label, c.negatives);
    EXPECT_NEAR(std::accumulate(gct.begin(), gct.end(), 0.0), 0.0, 1e-12);
    Row shifted = c.logits;
    for (auto& z : shifted) z += 7.5;
    const auto gs = grad_ct(shifted, c.label, c.negatives);
    for (std::size_t v = 0; v < gct.size(); ++v) EXPECT_NEAR(gs[v], gct[v], 1e-12);
  }
}

TEST(FiniteDiff, QuadraticErrorDecay) {
  const Row z = {0.3, -0.8};
  auto loss = [](std::span<const long double> x) { return ce_step(x, 0); };
  const auto exact = grad_ce(z, 0);
  const auto coarse = finite_diff_grad(loss, z, 1e-2);
  const auto fine = finite_diff_grad(loss, z, 5e-3);
  const double e1 = std::abs(coarse[0] - exact[0]);
  const double e2 = std::abs(fine[0] - exact[0]);
  // Halving h divides a second-order error by about four.
  EXPECT_NEAR(e1 / e2, 4.0, 0.05);
}

TEST(FiniteDiff, ExactOnLinearFunctions) {
  auto linear = [](std::span<const long double> x) { return 3.0L * x[1] - 0.5L * x[0]; };
  for (double h : {1e-1, 1.0, 4.0}) {
    const auto g = finite_diff_grad(linear, Row{2.0, -1.0}, h);
    EXPECT_NEAR(g[0], -0.5, 1e-15);
    EXPECT_NEAR(g[1], 3.0, 1e-15);
  }
  EXPECT_THROW(finite_diff_grad(linear, Row{0, 0}, 0.0), ConfigError);
}

TEST(FiniteDiff, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-9), 1e-9 / 1e-8);
}

TEST(Gradcheck, AllLossesMatchOracle) {
  for (LossKind k : {LossKind::kCe, LossKind::kUl, LossKind::kCt, LossKind::kNce}) {
    const GradcheckReport r = gradcheck(k, 100, 17);
    EXPECT_LE(r.max_rel_err, 1e-6) << to_string(k);
    EXPECT_EQ(r.sign_violations, 0) << to_string(k);
  }
}

TEST(Influence, SignPatterns) {
  for (LossKind k : {LossKind::kCe, LossKind::kUl, LossKind::kCt, LossKind::kNce}) {
    const InfluenceReport r = influence_matrix_check(k, 300, 5);
    EXPECT_TRUE(r.ok()) << to_string(k) << (r.failures.empty() ? "" : ": " + r.failures.front());
    EXPECT_EQ(r.irrelevant_nonzero, 0);
  }
  const InfluenceReport ul = influence_matrix_check(LossKind::kUl, 1, 5);
  EXPECT_GT(ul.ul_promoted_negatives, 0);
  EXPECT_GT(ul.ul_suppressed_negatives, 0);
}

TEST(RandomCases, RespectBounds) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const GradCase c = random_grad_case(LossKind::kNce, s);
    EXPECT_GE(c.logits.size(), 3u);
    EXPECT_LE(c.logits.size(), 50u);
    EXPECT_LE(c.negatives.size(), 8u);
    for (const auto& n : c.negatives) {
      EXPECT_NE(n.id, c.label);
      EXPECT_GE(n.count, 1);
      EXPECT_LE(n.count, 3);
    }
  }
  EXPECT_THROW(parse_loss_kind("mse"), ConfigError);
}

}  // namespace
}  // namespace ctlm
