#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctlm/corpus.hpp"
#include "ctlm/decoding.hpp"
#include "ctlm/losses.hpp"
#include "ctlm/metrics.hpp"
#include "ctlm/model.hpp"

namespace ctlm {

std::string code_version();

/// $CTLM_OUTPUT_DIR when set, otherwise "runs".
std::filesystem::path default_output_dir();

struct DataConfig {
  std::filesystem::path train;
  std::filesystem::path valid;
  std::filesystem::path test;
  TokenizerMode mode = TokenizerMode::kWord;
  int max_vocab = 4000;

  nlohmann::json to_json() const;
  static DataConfig from_json(const nlohmann::json& j);
  /// train.txt / valid.txt / test.txt inside `dir`.
  static DataConfig from_directory(const std::filesystem::path& dir);
};

struct PreparedData {
  Vocabulary vocab;
  Corpus corpus;
};

/// Builds the vocabulary from the training text and encodes all three splits.
PreparedData prepare_data(const DataConfig& config, int trunk_length);
/// Encodes the splits with an existing vocabulary.
PreparedData prepare_data(const DataConfig& config, const Vocabulary& vocab, int trunk_length);

struct TrainConfig {
  ModelConfig model;  // vocab_size is taken from the data
  LossConfig loss;
  AdamConfig adam;    // warmup and total steps are taken from the fields below
  int total_steps = 2000;
  int warmup_steps = 120;
  int eval_interval = 40;
  int ul_s_switch_step = -1;   // -1 selects 97% of total_steps
  double ul_s_lr_scale = 1.0;  // learning-rate factor once UL-S is active
  int ul_s_prefix = 50;
  int trunk_length = 128;
  int batch_size = 8;
  int log_interval = 10;
  int valid_max_trunks = 0;    // 0 uses every validation trunk
  std::uint64_t seed = 1;
  std::filesystem::path output_dir;
  std::filesystem::path init_checkpoint;  // empty starts from a fresh initialization
  DataConfig data;

  /// Ratio-preserving defaults for a given step budget: warmup 6%, eval every 2%.
  static TrainConfig desk_defaults(Objective objective, int total_steps);

  int switch_step() const;
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EvalRecord {
  int step = 0;
  double valid_ce = 0.0;
};

struct LossRecord {
  int step = 0;
  double total = 0.0;
  double ce = 0.0;
  double aux = 0.0;
  double ul_s = 0.0;
  double learning_rate = 0.0;
  double grad_norm = 0.0;
};

struct RunManifest {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string code_version;
  int threads = 1;
  int vocab_size = 0;
  std::vector<EvalRecord> evals;
  std::vector<LossRecord> losses;
  int selected_step = 0;
  double selected_valid_ce = 0.0;
  std::optional<int> ul_s_switch_step;
  int ul_s_updates = 0;
  std::string best_checkpoint;
  std::string final_checkpoint;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

struct TrainResult {
  RunManifest manifest;
  ModelState best;
  ModelState last;
};

struct TrainCallbacks {
  std::function<void(const LossRecord&)> on_log;
  std::function<void(const EvalRecord&)> on_eval;
};

/// Mean next-token cross-entropy over (up to `max_trunks`) trunks.
double validation_ce(const ModelState& state, const std::vector<std::vector<TokenId>>& trunks, int batch_size,
                     int max_trunks = 0);

/// Trains from `init` when given, else from config.init_checkpoint when set, else
/// from a fresh initialization. When config.output_dir is set, writes best.ckpt,
/// final.ckpt and manifest.json there.
TrainResult train(const TrainConfig& config, const Corpus& corpus, int vocab_size, const TrainCallbacks& callbacks = {},
                  const ModelState* init = nullptr);

struct EvalConfig {
  DecodeConfig decode;
  int prefix_len = 50;
  int gen_len = 100;
  int heatmap_instances = 10;
  int ppl_s_window = 50;
  int max_instances = 0;  // 0 uses every test instance
  std::string name;

  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

struct Generation {
  std::vector<TokenId> prefix;
  DecodeResult result;
};

std::vector<EvalInstance> test_instances(const Corpus& corpus, const EvalConfig& config);

/// Decodes every test instance and scores the continuations.
MetricsReport evaluate(const ModelState& state, const Corpus& corpus, const EvalConfig& config,
                       std::vector<Generation>* generations = nullptr);

/// The same metrics on the reference continuations (no model, no perplexity).
MetricsReport reference_metrics(const Corpus& corpus, const EvalConfig& config);

}  // namespace ctlm
