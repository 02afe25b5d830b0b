#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "ctlm/error.hpp"
#include "ctlm/harness.hpp"
#include "ctlm/report.hpp"

namespace ctlm {
namespace {

constexpr int kVocab = 24;
constexpr int kTrunk = 32;

// Tokens from a sparse Markov chain, so a small model can learn something quickly.
std::vector<TokenId> markov_stream(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> jump(4, kVocab - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TokenId> out;
  TokenId t = 4;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(t);
    t = u(rng) < 0.8 ? 4 + (t - 4 + 1) % (kVocab - 4) : jump(rng);
  }
  return out;
}

const Corpus& toy_corpus() {
  static const Corpus c = split_corpus(markov_stream(12000, 3), kTrunk, SplitRatios{0.8, 0.1, 0.1});
  return c;
}

TrainConfig toy_config(Objective objective, int steps = 50) {
  TrainConfig c = TrainConfig::desk_defaults(objective, steps);
  c.trunk_length = kTrunk;
  c.loss = LossConfig::for_trunk(objective, kTrunk);
  c.model.d_model = 16;
  c.model.n_layers = 1;
  c.model.n_heads = 2;
  c.model.d_ff = 32;
  c.model.max_positions = 64;
  c.batch_size = 4;
  c.log_interval = 1;
  c.eval_interval = 10;
  c.adam.learning_rate = 1e-2;
  c.ul_s_prefix = 10;
  return c;
}

EvalConfig toy_eval(DecodeStrategy strategy) {
  EvalConfig e;
  e.decode.strategy = strategy;
  e.prefix_len = 10;
  e.gen_len = 20;
  e.ppl_s_window = 10;
  e.heatmap_instances = 3;
  e.name = std::string(to_string(strategy));
  return e;
}

TEST(Train, CrossEntropyLowersValidationLoss) {
  const TrainResult r = train(toy_config(Objective::kCe), toy_corpus(), kVocab);
  const auto& evals = r.manifest.evals;
  ASSERT_GE(evals.size(), 2u);
  EXPECT_EQ(evals.front().step, 0);
  EXPECT_EQ(evals.back().step, 50);
  EXPECT_LT(evals.back().valid_ce, evals.front().valid_ce - 0.5);
  EXPECT_EQ(r.manifest.losses.size(), 50u);
  EXPECT_FALSE(r.manifest.ul_s_switch_step.has_value());
  double best = 1e300;
  for (const auto& e : evals) best = std::min(best, e.valid_ce);
  EXPECT_DOUBLE_EQ(r.manifest.selected_valid_ce, best);
  EXPECT_NEAR(validation_ce(r.best, toy_corpus().valid, 4), best, 1e-6);
}

TEST(Train, ContrastiveAuxiliaryIsNonNegative) {
  const TrainResult r = train(toy_config(Objective::kCeCt, 20), toy_corpus(), kVocab);
  for (const auto& l : r.manifest.losses) {
    EXPECT_GE(l.aux, 0.0);
    EXPECT_NEAR(l.total, l.ce + l.aux, 1e-9);
  }
}

TEST(Train, SequenceUnlikelihoodStartsAfterSwitch) {
  TrainConfig c = toy_config(Objective::kUlTs, 20);
  c.ul_s_switch_step = 15;
  const TrainResult r = train(c, toy_corpus(), kVocab);
  ASSERT_TRUE(r.manifest.ul_s_switch_step.has_value());
  EXPECT_EQ(*r.manifest.ul_s_switch_step, 15);
  EXPECT_EQ(r.manifest.ul_s_updates, 5);
  for (const auto& l : r.manifest.losses) {
    if (l.step <= 15) {
      EXPECT_EQ(l.ul_s, 0.0) << "step " << l.step;
    }
  }
  EXPECT_EQ(toy_config(Objective::kUlTs, 100).switch_step(), 97);
}

TEST(Train, SameSeedIsBitwiseReproducible) {
  const TrainConfig c = toy_config(Objective::kCeCt, 15);
  const TrainResult a = train(c, toy_corpus(), kVocab);
  const TrainResult b = train(c, toy_corpus(), kVocab);
  ASSERT_EQ(a.last.parameter_count(), b.last.parameter_count());
  EXPECT_TRUE(std::equal(a.last.parameters().begin(), a.last.parameters().end(), b.last.parameters().begin()));
  TrainConfig other = c;
  other.seed = 2;
  const TrainResult d = train(other, toy_corpus(), kVocab);
  EXPECT_FALSE(std::equal(a.last.parameters().begin(), a.last.parameters().end(), d.last.parameters().begin()));
}

TEST(Train, WritesCheckpointsAndManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "ctlm_harness_run";
  std::filesystem::remove_all(dir);
  TrainConfig c = toy_config(Objective::kCe, 10);
  c.output_dir = dir;
  const TrainResult r = train(c, toy_corpus(), kVocab);
  ASSERT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  const ModelState best = load_checkpoint(dir / "best.ckpt", kVocab);
  EXPECT_TRUE(std::equal(best.parameters().begin(), best.parameters().end(), r.best.parameters().begin()));
  std::ifstream in(dir / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("seed").get<std::uint64_t>(), 1u);
  EXPECT_EQ(j.at("code_version").get<std::string>(), code_version());
  EXPECT_EQ(TrainConfig::from_json(j.at("config")).to_json(), j.at("config"));
  std::filesystem::remove_all(dir);
}

TEST(TrainConfig, RejectsInvalidSettings) {
  TrainConfig c = toy_config(Objective::kCe);
  c.trunk_length = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config(Objective::kUlTs);
  c.ul_s_switch_step = 50;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config(Objective::kCeCt);
  c.loss.ct_crop_length = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config(Objective::kCe);
  c.eval_interval = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(train(c, toy_corpus(), kVocab), ConfigError);
}

TEST(TrainConfig, DeskDefaultsKeepRatios) {
  const TrainConfig c = TrainConfig::desk_defaults(Objective::kCeCt, 2000);
  EXPECT_EQ(c.warmup_steps, 120);
  EXPECT_EQ(c.eval_interval, 40);
  EXPECT_EQ(c.loss.ct_crop_length, 32);
  EXPECT_EQ(c.loss.negative_window, 16);
}

class Evaluation : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_ = std::make_unique<ModelState>(train(toy_config(Objective::kCe, 40), toy_corpus(), kVocab).best);
  }
  static void TearDownTestSuite() { model_.reset(); }
  static std::unique_ptr<ModelState> model_;
};

std::unique_ptr<ModelState> Evaluation::model_;

TEST_F(Evaluation, BeamOfOneMatchesGreedy) {
  EvalConfig g = toy_eval(DecodeStrategy::kGreedy);
  EvalConfig b = toy_eval(DecodeStrategy::kBeam);
  b.decode.beam_size = 1;
  b.name = g.name;
  EXPECT_EQ(evaluate(*model_, toy_corpus(), g).to_json(), evaluate(*model_, toy_corpus(), b).to_json());
}

TEST_F(Evaluation, ReportFields) {
  std::vector<Generation> gens;
  const EvalConfig e = toy_eval(DecodeStrategy::kGreedy);
  const MetricsReport r = evaluate(*model_, toy_corpus(), e, &gens);
  const auto instances = test_instances(toy_corpus(), e);
  EXPECT_EQ(gens.size(), instances.size());
  EXPECT_EQ(r.continuations, static_cast<int>(instances.size()));
  ASSERT_TRUE(r.ppl && r.ppl_s);
  EXPECT_GT(*r.ppl, 1.0);
  EXPECT_LT(*r.ppl, kVocab);
  EXPECT_EQ(r.heatmap_instances, 3);
  EXPECT_EQ(r.heatmap.rows(), 20);
  EXPECT_EQ(r.histograms.size(), 4u);
}

TEST_F(Evaluation, NgramBanZeroesLongRepeats) {
  EvalConfig e = toy_eval(DecodeStrategy::kGreedy);
  e.decode.ngram_ban = 3;
  const MetricsReport r = evaluate(*model_, toy_corpus(), e);
  ASSERT_EQ(r.diagnostics, 0);
  EXPECT_EQ(r.rep[2], 0.0);
  EXPECT_EQ(r.rep[3], 0.0);
}

TEST_F(Evaluation, SamplingDependsOnlyOnSeed) {
  EvalConfig e = toy_eval(DecodeStrategy::kNucleus);
  e.decode.seed = 5;
  EXPECT_EQ(evaluate(*model_, toy_corpus(), e).to_json(), evaluate(*model_, toy_corpus(), e).to_json());
}

TEST(ReferenceMetrics, ScoresHumanContinuations) {
  const EvalConfig e = toy_eval(DecodeStrategy::kGreedy);
  const MetricsReport r = reference_metrics(toy_corpus(), e);
  EXPECT_EQ(r.name, "greedy");
  EXPECT_FALSE(r.ppl.has_value());
  EXPECT_EQ(r.total_tokens, static_cast<std::int64_t>(r.continuations) * 20);
}

nlohmann::json report_json(const std::string& name, double rep1, std::optional<double> ppl) {
  MetricsReport r;
  r.name = name;
  r.rep = {rep1, 0.1, 0.05, 0.01};
  r.dist_1 = 0.5;
  r.uniq_1 = 100;
  r.ppl = ppl;
  return r.to_json();
}

TEST(Report, MarksDirectionAwareWinners) {
  const ComparisonTable t = compare_reports({report_json("ce", 0.6, 20.0), report_json("ct", 0.4, 21.0)});
  ASSERT_EQ(t.names.size(), 2u);
  const auto col = [&](const std::string& key) {
    for (std::size_t i = 0; i < t.columns.size(); ++i) {
      if (t.columns[i].key == key) return i;
    }
    throw std::runtime_error("missing column " + key);
  };
  EXPECT_TRUE(t.best[1][col("rep_1")]);
  EXPECT_FALSE(t.best[0][col("rep_1")]);
  EXPECT_TRUE(t.best[0][col("ppl")]);
  EXPECT_TRUE(t.best[0][col("uniq_1")] && t.best[1][col("uniq_1")]);
  EXPECT_FALSE(t.values[0][col("ppl_s")].has_value());
  const std::string text = t.text();
  EXPECT_NE(text.find("--"), std::string::npos);
  EXPECT_NE(text.find('*'), std::string::npos);
  EXPECT_NE(t.csv().find("best"), std::string::npos);
}

TEST(Report, NeedsTwoReports) {
  EXPECT_THROW(compare_reports({report_json("ce", 0.6, 20.0)}), InputError);
}

}  // namespace
}  // namespace ctlm
