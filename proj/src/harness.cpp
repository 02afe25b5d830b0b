#include "ctlm/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>

#include "ctlm/error.hpp"
#include "ctlm/negatives.hpp"

#ifndef CTLM_VERSION
#define CTLM_VERSION "unknown"
#endif

namespace ctlm {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

/// Shuffled trunk order, reshuffled at every epoch boundary.
class TrunkSampler {
 public:
  TrunkSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

/// Greedy continuation of a batch row's prefix, penalised on repeated n-grams.
double ul_sequence_step(const ModelState& state, std::span<const TokenId> row, const TrainConfig& config,
                        ParamGrads& grads) {
  const int prefix_len = config.ul_s_prefix;
  const int gen_len = config.trunk_length - prefix_len;
  if (gen_len < config.loss.ul_seq_ngram || static_cast<int>(row.size()) < prefix_len) return 0.0;
  const auto prefix = row.first(static_cast<std::size_t>(prefix_len));
  for (TokenId t : prefix) {
    if (t == Vocabulary::kPad) return 0.0;
  }
  DecodeConfig dc;
  dc.strategy = DecodeStrategy::kGreedy;
  dc.max_new_tokens = gen_len;
  const DecodeResult gen = decode(state, prefix, dc);
  if (static_cast<int>(gen.ids.size()) < config.loss.ul_seq_ngram) return 0.0;

  std::vector<TokenId> seq(prefix.begin(), prefix.end());
  seq.insert(seq.end(), gen.ids.begin(), gen.ids.end());
  const SequenceBatch inputs =
      SequenceBatch::from_sequences({std::vector<TokenId>(seq.begin(), seq.end() - 1)}, Vocabulary::kPad);
  ForwardCache cache;
  const auto out = forward(state, inputs, &cache);
  Matrix dz;
  const double loss = ul_sequence_loss(out.logits, seq, prefix.size(), config.loss.ul_seq_ngram,
                                       config.loss.prob_clamp, &dz);
  if (loss == 0.0) return 0.0;
  const ParamGrads g = backward(state, cache, dz);
  for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += g[i];
  return loss;
}

nlohmann::json loss_record_json(const LossRecord& r) {
  return {{"step", r.step}, {"total", r.total}, {"ce", r.ce}, {"aux", r.aux},
          {"ul_s", r.ul_s}, {"lr", r.learning_rate}, {"grad_norm", r.grad_norm}};
}

}  // namespace

std::string code_version() { return CTLM_VERSION; }

std::filesystem::path default_output_dir() {
  if (const char* env = std::getenv("CTLM_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return "runs";
}

// ---------------------------------------------------------------------------

nlohmann::json DataConfig::to_json() const {
  return {{"train", train.string()},
          {"valid", valid.string()},
          {"test", test.string()},
          {"tokenizer", std::string(to_string(mode))},
          {"max_vocab", max_vocab}};
}

DataConfig DataConfig::from_json(const nlohmann::json& j) {
  DataConfig c;
  c.train = j.value("train", "");
  c.valid = j.value("valid", "");
  c.test = j.value("test", "");
  if (j.contains("tokenizer")) c.mode = parse_tokenizer_mode(j.at("tokenizer").get<std::string>());
  c.max_vocab = j.value("max_vocab", c.max_vocab);
  return c;
}

DataConfig DataConfig::from_directory(const std::filesystem::path& dir) {
  DataConfig c;
  c.train = dir / "train.txt";
  c.valid = dir / "valid.txt";
  c.test = dir / "test.txt";
  return c;
}

PreparedData prepare_data(const DataConfig& config, int trunk_length) {
  const std::string text = read_text_file(config.train);
  Vocabulary vocab = build_vocab(text, config.mode, config.max_vocab);
  return prepare_data(config, vocab, trunk_length);
}

PreparedData prepare_data(const DataConfig& config, const Vocabulary& vocab, int trunk_length) {
  const auto train_ids = encode(vocab, read_text_file(config.train));
  const auto valid_ids = encode(vocab, read_text_file(config.valid));
  const auto test_ids = encode(vocab, read_text_file(config.test));
  PreparedData d{vocab, make_corpus(train_ids, valid_ids, test_ids, trunk_length)};
  if (d.corpus.train.empty() || d.corpus.valid.empty() || d.corpus.test.empty()) {
    throw InputError("every corpus split needs at least one trunk");
  }
  return d;
}

// ---------------------------------------------------------------------------

TrainConfig TrainConfig::desk_defaults(Objective objective, int total_steps) {
  TrainConfig c;
  c.total_steps = total_steps;
  c.warmup_steps = static_cast<int>(std::lround(0.06 * total_steps));
  c.eval_interval = std::max(1, total_steps / 50);
  c.loss = LossConfig::for_trunk(objective, c.trunk_length);
  return c;
}

int TrainConfig::switch_step() const {
  if (ul_s_switch_step >= 0) return ul_s_switch_step;
  return static_cast<int>(std::lround(0.97 * total_steps));
}

void TrainConfig::validate() const {
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps > total_steps) throw ConfigError("warmup_steps must lie in [0, total_steps]");
  if (eval_interval < 1 || eval_interval > total_steps) throw ConfigError("eval_interval must lie in [1, total_steps]");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (trunk_length < 2) throw ConfigError("trunk_length must be >= 2");
  if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
  if (trunk_length - 1 > model.max_positions) throw ConfigError("max_positions must cover trunk_length - 1");
  loss.validate(trunk_length - 1);
  if (loss.objective == Objective::kUlTs) {
    if (switch_step() >= total_steps) throw ConfigError("ul_s_switch_step must be < total_steps");
    if (ul_s_prefix < 1 || ul_s_prefix >= trunk_length) throw ConfigError("ul_s_prefix must lie in [1, trunk_length)");
    if (!(ul_s_lr_scale > 0.0)) throw ConfigError("ul_s_lr_scale must be positive");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json m = model.to_json();
  nlohmann::json l = {{"objective", std::string(to_string(loss.objective))},
                      {"ct_crop_length", loss.ct_crop_length},
                      {"negative_window", loss.negative_window},
                      {"ul_seq_ngram", loss.ul_seq_ngram},
                      {"prob_clamp", loss.prob_clamp}};
  nlohmann::json a = {{"learning_rate", adam.learning_rate}, {"beta1", adam.beta1},   {"beta2", adam.beta2},
                      {"epsilon", adam.epsilon},             {"clip_norm", adam.clip_norm}};
  return {{"model", m},
          {"loss", l},
          {"adam", a},
          {"total_steps", total_steps},
          {"warmup_steps", warmup_steps},
          {"eval_interval", eval_interval},
          {"ul_s_switch_step", ul_s_switch_step},
          {"ul_s_lr_scale", ul_s_lr_scale},
          {"ul_s_prefix", ul_s_prefix},
          {"trunk_length", trunk_length},
          {"batch_size", batch_size},
          {"log_interval", log_interval},
          {"valid_max_trunks", valid_max_trunks},
          {"seed", seed},
          {"output_dir", output_dir.string()},
          {"init_checkpoint", init_checkpoint.string()},
          {"data", data.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("model")) {
    nlohmann::json m = j["model"];
    if (!m.contains("vocab_size")) m["vocab_size"] = 0;
    c.model = ModelConfig::from_json(m);
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    if (l.contains("objective")) c.loss.objective = parse_objective(l.at("objective").get<std::string>());
    c.loss.ct_crop_length = l.value("ct_crop_length", c.loss.ct_crop_length);
    c.loss.negative_window = l.value("negative_window", c.loss.negative_window);
    c.loss.ul_seq_ngram = l.value("ul_seq_ngram", c.loss.ul_seq_ngram);
    c.loss.prob_clamp = l.value("prob_clamp", c.loss.prob_clamp);
  }
  if (j.contains("adam")) {
    const auto& a = j["adam"];
    c.adam.learning_rate = a.value("learning_rate", c.adam.learning_rate);
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
    c.adam.clip_norm = a.value("clip_norm", c.adam.clip_norm);
  }
  c.total_steps = j.value("total_steps", c.total_steps);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.ul_s_switch_step = j.value("ul_s_switch_step", c.ul_s_switch_step);
  c.ul_s_lr_scale = j.value("ul_s_lr_scale", c.ul_s_lr_scale);
  c.ul_s_prefix = j.value("ul_s_prefix", c.ul_s_prefix);
  c.trunk_length = j.value("trunk_length", c.trunk_length);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.log_interval = j.value("log_interval", c.log_interval);
  c.valid_max_trunks = j.value("valid_max_trunks", c.valid_max_trunks);
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", std::string());
  c.init_checkpoint = j.value("init_checkpoint", std::string());
  if (j.contains("data")) c.data = DataConfig::from_json(j["data"]);
  return c;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json evals_json = nlohmann::json::array();
  for (const auto& e : evals) evals_json.push_back({{"step", e.step}, {"valid_ce", e.valid_ce}});
  nlohmann::json losses_json = nlohmann::json::array();
  for (const auto& l : losses) losses_json.push_back(loss_record_json(l));
  nlohmann::json j = {{"config", config},
                      {"seed", seed},
                      {"code_version", code_version},
                      {"threads", threads},
                      {"vocab_size", vocab_size},
                      {"evals", evals_json},
                      {"losses", losses_json},
                      {"selected_step", selected_step},
                      {"selected_valid_ce", selected_valid_ce},
                      {"ul_s_switch_step", ul_s_switch_step ? nlohmann::json(*ul_s_switch_step) : nlohmann::json(nullptr)},
                      {"ul_s_updates", ul_s_updates},
                      {"best_checkpoint", best_checkpoint},
                      {"final_checkpoint", final_checkpoint}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

// ---------------------------------------------------------------------------

double validation_ce(const ModelState& state, const std::vector<std::vector<TokenId>>& trunks, int batch_size,
                     int max_trunks) {
  if (trunks.empty()) throw InputError("no validation trunks");
  const std::size_t n = max_trunks > 0 ? std::min(trunks.size(), static_cast<std::size_t>(max_trunks)) : trunks.size();
  LossConfig ce;
  ce.objective = Objective::kCe;
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    const std::vector<std::vector<TokenId>> rows(trunks.begin() + static_cast<std::ptrdiff_t>(start),
                                                 trunks.begin() + static_cast<std::ptrdiff_t>(end));
    const SequenceBatch batch = SequenceBatch::from_sequences(rows, Vocabulary::kPad);
    const auto out = forward(state, batch.inputs());
    const LossReport r = batch_loss(out.logits, batch, ce, nullptr);
    sum += r.ce_component * static_cast<double>(r.tokens_counted);
    count += r.tokens_counted;
  }
  return sum / static_cast<double>(count);
}

TrainResult train(const TrainConfig& config, const Corpus& corpus, int vocab_size, const TrainCallbacks& callbacks,
                  const ModelState* init) {
  TrainConfig cfg = config;
  cfg.model.vocab_size = vocab_size;
  cfg.model.seed = cfg.seed;
  cfg.validate();
  if (corpus.train.empty() || corpus.valid.empty()) throw InputError("training needs train and valid trunks");

  AdamConfig adam = cfg.adam;
  adam.warmup_steps = cfg.warmup_steps;
  adam.total_steps = cfg.total_steps;
  adam.validate();

  const bool ul_ts = cfg.loss.objective == Objective::kUlTs;
  const int switch_at = ul_ts ? cfg.switch_step() : -1;

  ModelState state(cfg.model);
  std::optional<ModelState> loaded;
  if (!init && !cfg.init_checkpoint.empty()) init = &loaded.emplace(load_checkpoint(cfg.init_checkpoint, vocab_size));
  if (init) {
    ModelConfig a = init->config();
    ModelConfig b = cfg.model;
    a.seed = b.seed;
    a.dropout = b.dropout;
    if (!(a == b)) throw ConfigError("initial model architecture differs from the configured one");
    std::copy(init->parameters().begin(), init->parameters().end(), state.parameters().begin());
  }
  ModelState best = state;
  AdamMoments moments;
  TrunkSampler sampler(corpus.train.size(), mix(cfg.seed));
  std::mt19937_64 dropout_rng(mix(cfg.seed ^ 0x5bd1e995ULL));

  RunManifest manifest;
  manifest.config = cfg.to_json();
  manifest.seed = cfg.seed;
  manifest.code_version = code_version();
  manifest.vocab_size = vocab_size;
  if (ul_ts) manifest.ul_s_switch_step = switch_at;

  auto record_eval = [&](int step) {
    EvalRecord e{step, validation_ce(state, corpus.valid, cfg.batch_size, cfg.valid_max_trunks)};
    if (!std::isfinite(e.valid_ce)) throw TrainingError("step " + std::to_string(step) + ": non-finite validation loss");
    if (manifest.evals.empty() || e.valid_ce < manifest.selected_valid_ce) {
      manifest.selected_step = step;
      manifest.selected_valid_ce = e.valid_ce;
      std::copy(state.parameters().begin(), state.parameters().end(), best.parameters().begin());
    }
    manifest.evals.push_back(e);
    if (callbacks.on_eval) callbacks.on_eval(e);
  };

  record_eval(0);
  for (int step = 1; step <= cfg.total_steps; ++step) {
    std::vector<std::vector<TokenId>> rows;
    for (int b = 0; b < cfg.batch_size; ++b) rows.push_back(corpus.train[sampler.next()]);
    const SequenceBatch batch = SequenceBatch::from_sequences(rows, Vocabulary::kPad);

    LossRecord rec;
    rec.step = step;
    ParamGrads grads;
    AdamConfig step_adam = adam;
    try {
      ForwardCache cache;
      const auto out = forward(state, batch.inputs(), &cache, {cfg.model.dropout > 0.0, &dropout_rng});
      Matrix dz;
      const LossReport loss = batch_loss(out.logits, batch, cfg.loss, &dz);
      grads = backward(state, cache, dz);
      rec.total = loss.total;
      rec.ce = loss.ce_component;
      rec.aux = loss.aux_component;
      if (ul_ts && step > switch_at) {
        rec.ul_s = ul_sequence_step(state, batch.row(0), cfg, grads);
        rec.total += rec.ul_s;
        ++manifest.ul_s_updates;
        step_adam.learning_rate *= cfg.ul_s_lr_scale;
      }
      if (!std::isfinite(rec.total)) throw TrainingError("non-finite loss");
      const AdamStepInfo info = adam_step(state, grads, step_adam, step, moments);
      rec.learning_rate = info.learning_rate;
      rec.grad_norm = info.grad_norm;
    } catch (const TrainingError& e) {
      throw TrainingError("step " + std::to_string(step) + ": " + e.what());
    }

    if (step % cfg.log_interval == 0 || step == cfg.total_steps) {
      manifest.losses.push_back(rec);
      if (callbacks.on_log) callbacks.on_log(rec);
    }
    if (step % cfg.eval_interval == 0 || step == cfg.total_steps) record_eval(step);
  }

  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    manifest.best_checkpoint = (cfg.output_dir / "best.ckpt").string();
    manifest.final_checkpoint = (cfg.output_dir / "final.ckpt").string();
    save_checkpoint(best, manifest.best_checkpoint);
    save_checkpoint(state, manifest.final_checkpoint);
    write_text(cfg.output_dir / "manifest.json", manifest.to_json().dump(2) + "\n");
  }
  return {std::move(manifest), std::move(best), std::move(state)};
}

// ---------------------------------------------------------------------------

nlohmann::json EvalConfig::to_json() const {
  return {{"decode", decode.to_json()},
          {"prefix_len", prefix_len},
          {"gen_len", gen_len},
          {"heatmap_instances", heatmap_instances},
          {"ppl_s_window", ppl_s_window},
          {"max_instances", max_instances},
          {"name", name}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  EvalConfig c;
  if (j.contains("decode")) c.decode = DecodeConfig::from_json(j["decode"]);
  c.prefix_len = j.value("prefix_len", c.prefix_len);
  c.gen_len = j.value("gen_len", c.gen_len);
  c.heatmap_instances = j.value("heatmap_instances", c.heatmap_instances);
  c.ppl_s_window = j.value("ppl_s_window", c.ppl_s_window);
  c.max_instances = j.value("max_instances", c.max_instances);
  c.name = j.value("name", c.name);
  return c;
}

std::vector<EvalInstance> test_instances(const Corpus& corpus, const EvalConfig& config) {
  if (config.prefix_len < 1 || config.gen_len < 1) throw ConfigError("prefix and continuation lengths must be >= 1");
  const auto ids = Corpus::flatten(corpus.test);
  auto instances = make_eval_instances(ids, config.prefix_len, config.gen_len);
  if (config.max_instances > 0 && instances.size() > static_cast<std::size_t>(config.max_instances)) {
    instances.resize(static_cast<std::size_t>(config.max_instances));
  }
  if (instances.empty()) throw InputError("no evaluation instances in the test split");
  return instances;
}

MetricsReport evaluate(const ModelState& state, const Corpus& corpus, const EvalConfig& config,
                       std::vector<Generation>* generations) {
  const auto instances = test_instances(corpus, config);
  DecodeConfig dc = config.decode;
  dc.max_new_tokens = config.gen_len;
  dc.validate(state.config().vocab_size);

  std::vector<std::vector<TokenId>> continuations;
  std::vector<Matrix> heatmaps;
  int diagnostics = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    DecodeConfig per = dc;
    per.seed = mix(dc.seed + i);
    DecodeResult r = decode(state, instances[i].prefix, per);
    diagnostics += static_cast<int>(r.diagnostics.size());
    continuations.push_back(strip_structural(r.ids));
    if (static_cast<int>(i) < config.heatmap_instances && !r.ids.empty()) {
      std::vector<TokenId> seq = instances[i].prefix;
      seq.insert(seq.end(), r.ids.begin(), r.ids.end());
      heatmaps.push_back(prob_heatmap(state, seq, instances[i].prefix.size()));
    }
    if (generations) generations->push_back({instances[i].prefix, std::move(r)});
  }

  MetricsReport report = continuation_metrics(continuations);
  report.name = config.name;
  report.diagnostics = diagnostics;
  const std::vector<std::vector<TokenId>> test_stream = {Corpus::flatten(corpus.test)};
  report.ppl = perplexity(state, test_stream, corpus.trunk_length);
  report.ppl_s = perplexity(state, test_stream, config.ppl_s_window);
  report.heatmap = average_heatmaps(heatmaps);
  report.heatmap_instances = static_cast<int>(heatmaps.size());
  return report;
}

MetricsReport reference_metrics(const Corpus& corpus, const EvalConfig& config) {
  std::vector<std::vector<TokenId>> continuations;
  for (const auto& inst : test_instances(corpus, config)) {
    continuations.push_back(strip_structural(inst.reference_continuation));
  }
  MetricsReport report = continuation_metrics(continuations);
  report.name = config.name.empty() ? "reference" : config.name;
  return report;
}

}  // namespace ctlm
