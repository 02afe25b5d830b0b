#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctlm/tensor.hpp"

namespace ctlm {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 512;
  int max_positions = 256;
  double dropout = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TensorSlot {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Offsets of one transformer block's tensors inside the flat parameter vector.
struct BlockLayout {
  std::size_t ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
  std::size_t ln2_g, ln2_b, fc_w, fc_b, out_w, out_b;
};

/// Parameter gradients, laid out exactly like ModelState::parameters().
using ParamGrads = FloatBuffer;

/// All weights of the language model in one contiguous buffer. The token
/// embedding "wte" doubles as the output projection, so logits are h_t . W_v.
class ModelState {
 public:
  enum class Init { kRandom, kZero };

  explicit ModelState(ModelConfig config, Init init = Init::kRandom);

  const ModelConfig& config() const { return config_; }
  std::span<float> parameters() { return params_; }
  std::span<const float> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<TensorSlot>& slots() const { return slots_; }
  const TensorSlot& slot(std::string_view name) const;

  MatrixMap tensor(std::string_view name);
  ConstMatrixMap tensor(std::string_view name) const;

  // Hot-path accessors used by forward/backward.
  std::size_t wte_offset() const { return wte_; }
  std::size_t wpe_offset() const { return wpe_; }
  std::size_t lnf_g_offset() const { return lnf_g_; }
  std::size_t lnf_b_offset() const { return lnf_b_; }
  const std::vector<BlockLayout>& blocks() const { return blocks_; }

  ParamGrads zero_grads() const { return ParamGrads(params_.size(), 0.0f); }

 private:
  std::size_t add_slot(std::string name, int rows, int cols);

  ModelConfig config_;
  std::vector<TensorSlot> slots_;
  FloatBuffer params_;
  std::vector<BlockLayout> blocks_;
  std::size_t wte_ = 0, wpe_ = 0, lnf_g_ = 0, lnf_b_ = 0;
};

struct ForwardOptions {
  bool training = false;             // enables dropout when config.dropout > 0
  std::mt19937_64* rng = nullptr;    // required when dropout is active
};

struct BlockCache {
  Matrix ln1_hat, ln1_out;
  std::vector<float> ln1_rstd;
  Matrix qkv;
  std::vector<Matrix> probs;  // one T x T matrix per (sequence, head)
  Matrix attn, attn_drop;
  Matrix ln2_hat, ln2_out;
  std::vector<float> ln2_rstd;
  Matrix fc_pre, fc_act, mlp_drop;
};

/// Activations kept by forward() for backward().
struct ForwardCache {
  int batch = 0;
  int time = 0;
  std::vector<TokenId> ids;
  std::vector<BlockCache> blocks;
  Matrix lnf_hat;
  std::vector<float> lnf_rstd;
  Matrix hidden;
};

struct ForwardResult {
  Matrix hidden;  // (batch*time) x d_model, final-layer h_t
  Matrix logits;  // (batch*time) x vocab
};

/// Causal forward pass over a batch of input ids (mask is ignored: padding is
/// assumed to be on the right, where causality keeps it from affecting real tokens).
ForwardResult forward(const ModelState& state, const SequenceBatch& inputs, ForwardCache* cache = nullptr,
                      const ForwardOptions& options = {});

/// Parameter gradients given dL/dZ for the logits of the cached forward pass.
ParamGrads backward(const ModelState& state, const ForwardCache& cache, const Matrix& dlogits);

/// Logits for the token following `context`.
std::vector<float> next_token_logits(const ModelState& state, std::span<const TokenId> context);

/// Logits for the token following each of several equal-length contexts.
Matrix next_token_logits_batch(const ModelState& state, const std::vector<std::vector<TokenId>>& contexts);

/// Per-layer keys and values of the positions fed so far, for incremental decoding.
struct DecoderCache {
  std::vector<Matrix> keys;    // one max_positions x d_model matrix per layer
  std::vector<Matrix> values;
  int length = 0;
};

/// Feeds `token` at position cache.length and returns the logits for the next token.
/// Agrees with forward() up to float rounding.
std::vector<float> decode_step(const ModelState& state, DecoderCache& cache, TokenId token);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int warmup_steps = 0;
  int total_steps = 0;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping

  void validate() const;
  /// Linear warmup to learning_rate over warmup_steps, constant afterwards.
  double learning_rate_at(int step) const;
};

struct AdamMoments {
  FloatBuffer m;
  FloatBuffer v;
};

struct AdamStepInfo {
  double grad_norm = 0.0;  // before clipping
  double learning_rate = 0.0;
};

/// One Adam update. `step` is 1-based. Throws TrainingError on non-finite gradients.
AdamStepInfo adam_step(ModelState& state, std::span<const float> grads, const AdamConfig& config, int step,
                       AdamMoments& moments);

// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "CTLM", u32 version, u32 length + JSON ModelConfig, then per tensor:
/// u32 name length, name bytes, u32 rank, u32 dims[rank], float32 data (all little-endian).
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
/// Also rejects checkpoints whose vocabulary size differs from `expected_vocab_size`.
ModelState load_checkpoint(const std::filesystem::path& path, int expected_vocab_size);

}  // namespace ctlm
