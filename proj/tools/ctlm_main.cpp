// Command-line front end: train, generate, evaluate, gradcheck, report.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctlm/corpus.hpp"
#include "ctlm/decoding.hpp"
#include "ctlm/error.hpp"
#include "ctlm/gradients.hpp"
#include "ctlm/harness.hpp"
#include "ctlm/metrics.hpp"
#include "ctlm/model.hpp"
#include "ctlm/report.hpp"

namespace fs = std::filesystem;
using namespace ctlm;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

struct DecodeFlags {
  std::string strategy;
  int beam_size = 0, k = 0, ngram_ban = 0, min_len = 0, prefix_len = 0, gen_len = 0;
  double top_p = 0.0;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> opts;

  void add(CLI::App* app) {
    opts = {app->add_option("--decode", strategy, "greedy|beam|topk|nucleus"),
            app->add_option("--beam-size", beam_size, "Beam width"),
            app->add_option("--k", k, "Top-k pool size"),
            app->add_option("--top-p", top_p, "Nucleus mass"),
            app->add_option("--ngram-ban", ngram_ban, "Ban repeated n-grams of this order (0 = off)"),
            app->add_option("--min-len", min_len, "Minimum generated tokens before eos"),
            app->add_option("--prefix-len", prefix_len, "Prefix tokens per test instance"),
            app->add_option("--gen-len", gen_len, "Tokens to generate"),
            app->add_option("--seed", seed, "Sampling seed")};
  }

  void apply(EvalConfig& c) const {
    if (opts[0]->count()) c.decode.strategy = parse_decode_strategy(strategy);
    if (opts[1]->count()) c.decode.beam_size = beam_size;
    if (opts[2]->count()) c.decode.k = k;
    if (opts[3]->count()) c.decode.top_p = top_p;
    if (opts[4]->count()) c.decode.ngram_ban = ngram_ban;
    if (opts[5]->count()) c.decode.min_new_tokens = min_len;
    if (opts[6]->count()) c.prefix_len = prefix_len;
    if (opts[7]->count()) c.gen_len = gen_len;
    if (opts[8]->count()) c.decode.seed = seed;
    c.decode.max_new_tokens = c.gen_len;
  }
};

/// A trained run directory: checkpoint, vocabulary and the training config.
struct LoadedRun {
  TrainConfig config;
  Vocabulary vocab;
  ModelState model;
};

LoadedRun load_run(const fs::path& run, const std::string& checkpoint) {
  TrainConfig cfg = TrainConfig::from_json(read_json(run / "train_config.json"));
  Vocabulary vocab = Vocabulary::load(run / "vocab.txt", cfg.data.mode);
  const fs::path ckpt = checkpoint.empty() ? run / "best.ckpt" : fs::path(checkpoint);
  ModelState model = load_checkpoint(ckpt, vocab.size());
  return {std::move(cfg), std::move(vocab), std::move(model)};
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, objective, tokenizer, init;
  int m = 0, ct_crop = 0, steps = 0, batch = 0, trunk = 0, max_vocab = 0, d_model = 0, layers = 0, heads = 0,
      d_ff = 0, eval_interval = 0, warmup = 0, ul_s_switch = 0, valid_max = 0;
  double lr = 0.0, ul_s_lr_scale = 0.0, dropout = 0.0, clip = 0.0;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a, CLI::App* app) {
  auto given = [&](const char* name) { return app->get_option(name)->count() > 0; };
  TrainConfig cfg;
  if (!a.config.empty()) {
    cfg = TrainConfig::from_json(read_json(a.config));
  } else {
    cfg = TrainConfig::desk_defaults(given("--objective") ? parse_objective(a.objective) : Objective::kCe,
                                     given("--steps") ? a.steps : 2000);
    cfg.adam.learning_rate = 1e-3;
  }
  if (given("--objective")) cfg.loss.objective = parse_objective(a.objective);
  if (given("--trunk")) {
    cfg.trunk_length = a.trunk;
    const LossConfig scaled = LossConfig::for_trunk(cfg.loss.objective, a.trunk);
    cfg.loss.ct_crop_length = scaled.ct_crop_length;
    cfg.loss.negative_window = scaled.negative_window;
  }
  if (given("--steps")) cfg.total_steps = a.steps;
  if (given("--m")) cfg.loss.negative_window = a.m;
  if (given("--ct-crop")) cfg.loss.ct_crop_length = a.ct_crop;
  if (given("--batch-size")) cfg.batch_size = a.batch;
  if (given("--lr")) cfg.adam.learning_rate = a.lr;
  if (given("--clip")) cfg.adam.clip_norm = a.clip;
  if (given("--init")) cfg.init_checkpoint = a.init;
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--d-model")) cfg.model.d_model = a.d_model;
  if (given("--layers")) cfg.model.n_layers = a.layers;
  if (given("--heads")) cfg.model.n_heads = a.heads;
  if (given("--d-ff")) cfg.model.d_ff = a.d_ff;
  if (given("--dropout")) cfg.model.dropout = a.dropout;
  if (given("--eval-interval")) cfg.eval_interval = a.eval_interval;
  if (given("--warmup")) cfg.warmup_steps = a.warmup;
  if (given("--ul-s-switch")) cfg.ul_s_switch_step = a.ul_s_switch;
  if (given("--ul-s-lr-scale")) cfg.ul_s_lr_scale = a.ul_s_lr_scale;
  if (given("--valid-max-trunks")) cfg.valid_max_trunks = a.valid_max;
  if (given("--data") || cfg.data.train.empty()) cfg.data = DataConfig::from_directory(a.data);
  if (given("--tokenizer")) cfg.data.mode = parse_tokenizer_mode(a.tokenizer);
  if (given("--max-vocab")) cfg.data.max_vocab = a.max_vocab;
  if (given("--out")) {
    cfg.output_dir = a.out;
  } else if (cfg.output_dir.empty()) {
    cfg.output_dir = default_output_dir() / std::string(to_string(cfg.loss.objective));
  }

  const PreparedData data = prepare_data(cfg.data, cfg.trunk_length);
  cfg.model.vocab_size = data.vocab.size();
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  data.vocab.save(cfg.output_dir / "vocab.txt");
  write_file(cfg.output_dir / "train_config.json", cfg.to_json().dump(2) + "\n");

  std::fprintf(stderr, "training %s: |V|=%d, %zu train trunks, %d steps -> %s\n",
               std::string(to_string(cfg.loss.objective)).c_str(), data.vocab.size(), data.corpus.train.size(),
               cfg.total_steps, cfg.output_dir.string().c_str());
  const auto t0 = std::chrono::steady_clock::now();
  TrainCallbacks cb;
  cb.on_log = [&](const LossRecord& r) {
    if (r.step % (cfg.log_interval * 10) != 0 && r.step != cfg.total_steps) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "step %6d  loss %.4f  ce %.4f  aux %.4f  ul_s %.4f  lr %.2e  |g| %.3f  %.0fs\n", r.step,
                 r.total, r.ce, r.aux, r.ul_s, r.learning_rate, r.grad_norm, secs);
  };
  cb.on_eval = [&](const EvalRecord& e) { std::fprintf(stderr, "eval step %6d  valid ce %.4f\n", e.step, e.valid_ce); };
  const TrainResult result = train(cfg, data.corpus, data.vocab.size(), cb);
  std::printf("%s\n", nlohmann::json({{"output_dir", cfg.output_dir.string()},
                                      {"selected_step", result.manifest.selected_step},
                                      {"selected_valid_ce", result.manifest.selected_valid_ce}})
                          .dump()
                          .c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string run, checkpoint, config, prefixes, output;
  DecodeFlags decode;
};

int run_generate(const GenerateArgs& a) {
  const LoadedRun run = load_run(a.run, a.checkpoint);
  EvalConfig ec = a.config.empty() ? EvalConfig{} : EvalConfig::from_json(read_json(a.config));
  a.decode.apply(ec);

  std::vector<std::string> lines;
  {
    std::istream* in = &std::cin;
    std::ifstream file;
    if (!a.prefixes.empty() && a.prefixes != "-") {
      file.open(a.prefixes);
      if (!file) throw InputError("cannot open " + a.prefixes);
      in = &file;
    }
    for (std::string line; std::getline(*in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) lines.push_back(line);
    }
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto prefix = encode(run.vocab, lines[i]);
    DecodeConfig dc = ec.decode;
    dc.seed = ec.decode.seed + i;
    const DecodeResult r = decode(run.model, prefix, dc);
    for (const auto& d : r.diagnostics) std::fprintf(stderr, "prefix %zu: %s\n", i + 1, d.c_str());
    out << nlohmann::json({{"prefix", lines[i]},
                           {"continuation", ctlm::decode(run.vocab, r.ids)},
                           {"per_step_logprob", r.per_step_logprob}})
               .dump()
        << '\n';
  }
  if (a.output.empty()) {
    std::cout << out.str();
  } else {
    write_file(a.output, out.str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string run, checkpoint, config, data, output, csv, name;
  int max_instances = 0, heatmaps = 0;
  bool reference = false;
  DecodeFlags decode;
};

int run_evaluate(const EvaluateArgs& a, CLI::App* app) {
  const LoadedRun run = load_run(a.run, a.checkpoint);
  EvalConfig ec = a.config.empty() ? EvalConfig{} : EvalConfig::from_json(read_json(a.config));
  a.decode.apply(ec);
  if (app->get_option("--max-instances")->count()) ec.max_instances = a.max_instances;
  if (app->get_option("--heatmaps")->count()) ec.heatmap_instances = a.heatmaps;
  if (!a.name.empty()) ec.name = a.name;
  DataConfig dc = run.config.data;
  if (!a.data.empty()) {
    const DataConfig dir = DataConfig::from_directory(a.data);
    dc.train = dir.train;
    dc.valid = dir.valid;
    dc.test = dir.test;
  }
  const PreparedData data = prepare_data(dc, run.vocab, run.config.trunk_length);

  MetricsReport report;
  if (a.reference) {
    if (ec.name.empty()) ec.name = "reference";
    report = reference_metrics(data.corpus, ec);
  } else {
    if (ec.name.empty()) ec.name = std::string(to_string(run.config.loss.objective));
    report = evaluate(run.model, data.corpus, ec);
  }
  nlohmann::json j = report.to_json();
  j["eval_config"] = ec.to_json();
  const fs::path output = a.output.empty() ? fs::path(a.run) / ("metrics-" + std::string(to_string(ec.decode.strategy)) +
                                                                (a.reference ? "-reference" : "") + ".json")
                                           : fs::path(a.output);
  write_file(output, j.dump(2) + "\n");
  if (!a.csv.empty()) {
    write_file(a.csv, report.to_csv());
    const fs::path stem = fs::path(a.csv).replace_extension();
    write_file(stem.string() + "-histograms.csv", histograms_csv(report));
    if (report.heatmap.size() > 0) write_file(stem.string() + "-heatmap.csv", heatmap_csv(report.heatmap));
  }
  std::cout << report.to_csv();
  return 0;
}

// ---------------------------------------------------------------------------

int run_gradcheck(const std::string& loss, int trials, std::uint64_t seed, double h, double tolerance) {
  std::vector<LossKind> kinds;
  if (loss == "all") {
    kinds = {LossKind::kCe, LossKind::kUl, LossKind::kCt, LossKind::kNce};
  } else {
    kinds = {parse_loss_kind(loss)};
  }
  bool ok = true;
  for (LossKind kind : kinds) {
    const GradcheckReport r = gradcheck(kind, trials, seed, h);
    std::cout << nlohmann::json({{"loss", std::string(to_string(kind))},
                                 {"trials", r.trials},
                                 {"max_rel_err", r.max_rel_err},
                                 {"sign_violations", r.sign_violations}})
                     .dump()
              << '\n';
    ok = ok && r.max_rel_err <= tolerance && r.sign_violations == 0;
  }
  return ok ? 0 : 1;
}

int run_report(const std::vector<std::string>& files, const std::string& csv) {
  std::vector<nlohmann::json> reports;
  for (const auto& f : files) {
    nlohmann::json j = read_json(f);
    if (j.value("name", std::string()).empty()) j["name"] = fs::path(f).stem().string();
    reports.push_back(std::move(j));
  }
  const ComparisonTable table = compare_reports(reports);
  std::cout << table.text();
  if (!csv.empty()) write_file(csv, table.csv());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive token learning toolkit"};
  app.set_version_flag("--version", code_version());
  app.require_subcommand(1);

  TrainArgs ta;
  ta.data = "data";
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", ta.config, "TrainConfig JSON");
  train_cmd->add_option("--data", ta.data, "Directory with train.txt, valid.txt, test.txt");
  train_cmd->add_option("--out", ta.out, "Output directory");
  train_cmd->add_option("--objective", ta.objective, "ce|ce+ct|ce+nce|ul-t|ul-ts");
  train_cmd->add_option("--m", ta.m, "Negative window M");
  train_cmd->add_option("--ct-crop", ta.ct_crop, "Positions that receive the contrastive term");
  train_cmd->add_option("--steps", ta.steps, "Total training steps");
  train_cmd->add_option("--batch-size", ta.batch, "Trunks per batch");
  train_cmd->add_option("--trunk", ta.trunk, "Trunk length in tokens");
  train_cmd->add_option("--lr", ta.lr, "Peak learning rate");
  train_cmd->add_option("--seed", ta.seed, "Run seed");
  train_cmd->add_option("--tokenizer", ta.tokenizer, "word|char");
  train_cmd->add_option("--max-vocab", ta.max_vocab, "Vocabulary cap including specials");
  train_cmd->add_option("--d-model", ta.d_model, "Model width");
  train_cmd->add_option("--layers", ta.layers, "Transformer blocks");
  train_cmd->add_option("--heads", ta.heads, "Attention heads");
  train_cmd->add_option("--d-ff", ta.d_ff, "MLP width");
  train_cmd->add_option("--dropout", ta.dropout, "Dropout rate");
  train_cmd->add_option("--eval-interval", ta.eval_interval, "Steps between validation passes");
  train_cmd->add_option("--warmup", ta.warmup, "Warmup steps");
  train_cmd->add_option("--ul-s-switch", ta.ul_s_switch, "Step after which UL-S is added (ul-ts)");
  train_cmd->add_option("--ul-s-lr-scale", ta.ul_s_lr_scale, "Learning-rate factor during UL-S (ul-ts)");
  train_cmd->add_option("--valid-max-trunks", ta.valid_max, "Cap on validation trunks per pass");
  train_cmd->add_option("--clip", ta.clip, "Global gradient-norm clip (<= 0 disables)");
  train_cmd->add_option("--init", ta.init, "Checkpoint to start from instead of a fresh initialization");

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "Continue text prefixes");
  gen_cmd->add_option("--run", ga.run, "Run directory")->required();
  gen_cmd->add_option("--checkpoint", ga.checkpoint, "Checkpoint (default: best.ckpt in the run)");
  gen_cmd->add_option("--config", ga.config, "EvalConfig JSON");
  gen_cmd->add_option("--prefixes", ga.prefixes, "File with one prefix per line (default: stdin)");
  gen_cmd->add_option("--output", ga.output, "JSON lines output (default: stdout)");
  ga.decode.add(gen_cmd);

  EvaluateArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "Decode the test split and compute metrics");
  eval_cmd->add_option("--run", ea.run, "Run directory")->required();
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint (default: best.ckpt in the run)");
  eval_cmd->add_option("--config", ea.config, "EvalConfig JSON");
  eval_cmd->add_option("--data", ea.data, "Directory with train.txt, valid.txt, test.txt");
  eval_cmd->add_option("--output", ea.output, "Metrics JSON path");
  eval_cmd->add_option("--csv", ea.csv, "Also write CSV (plus -histograms.csv and -heatmap.csv)");
  eval_cmd->add_option("--name", ea.name, "Row label for reports");
  eval_cmd->add_option("--max-instances", ea.max_instances, "Cap on test instances");
  eval_cmd->add_option("--heatmaps", ea.heatmaps, "Instances averaged into the heat map");
  eval_cmd->add_flag("--reference", ea.reference, "Score the reference continuations instead of a model");
  ea.decode.add(eval_cmd);

  std::string loss = "all";
  int trials = 100;
  std::uint64_t gc_seed = 1;
  double h = 1e-4;
  double tolerance = 1e-6;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic logit gradients with finite differences");
  gc_cmd->add_option("--loss", loss, "ce|ul|ct|nce|all");
  gc_cmd->add_option("--trials", trials, "Random cases per loss");
  gc_cmd->add_option("--seed", gc_seed, "Case seed");
  gc_cmd->add_option("--step", h, "Finite-difference step");
  gc_cmd->add_option("--tolerance", tolerance, "Maximum accepted relative error");

  std::vector<std::string> files;
  std::string csv;
  auto* report_cmd = app.add_subcommand("report", "Compare metrics reports");
  report_cmd->add_option("reports", files, "Metrics JSON files")->required()->expected(2, -1);
  report_cmd->add_option("--csv", csv, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) return run_train(ta, train_cmd);
    if (*gen_cmd) return run_generate(ga);
    if (*eval_cmd) return run_evaluate(ea, eval_cmd);
    if (*gc_cmd) return run_gradcheck(loss, trials, gc_seed, h, tolerance);
    if (*report_cmd) return run_report(files, csv);
  } catch (const ctlm::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
