#include "ctlm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctlm/error.hpp"

namespace ctlm {

namespace {

using RowVec = Eigen::Matrix<float, 1, Eigen::Dynamic, Eigen::RowMajor>;
using RowVecMap = Eigen::Map<RowVec>;
using ConstRowVecMap = Eigen::Map<const RowVec>;

constexpr float kLayerNormEps = 1e-5f;
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2 / pi)
constexpr float kGeluA = 0.044715f;

ConstMatrixMap cmat(const ModelState& s, std::size_t offset, int rows, int cols) {
  return {s.parameters().data() + offset, rows, cols};
}
ConstRowVecMap cvec(const ModelState& s, std::size_t offset, int cols) {
  return {s.parameters().data() + offset, cols};
}
MatrixMap gmat(ParamGrads& g, std::size_t offset, int rows, int cols) { return {g.data() + offset, rows, cols}; }
RowVecMap gvec(ParamGrads& g, std::size_t offset, int cols) { return {g.data() + offset, cols}; }

void layer_norm(const Matrix& x, ConstRowVecMap gain, ConstRowVecMap bias, Matrix& hat, Matrix& out,
                std::vector<float>& rstd) {
  const auto n = x.rows();
  const auto d = x.cols();
  hat.resize(n, d);
  out.resize(n, d);
  rstd.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const float mean = x.row(i).mean();
    const float var = (x.row(i).array() - mean).square().mean();
    const float r = 1.0f / std::sqrt(var + kLayerNormEps);
    rstd[static_cast<std::size_t>(i)] = r;
    hat.row(i) = (x.row(i).array() - mean) * r;
    out.row(i) = hat.row(i).array() * gain.array() + bias.array();
  }
}

/// Adds dL/dx to `dx` and accumulates gain/bias gradients.
void layer_norm_backward(const Matrix& dout, const Matrix& hat, const std::vector<float>& rstd,
                         ConstRowVecMap gain, RowVecMap dgain, RowVecMap dbias, Matrix& dx) {
  const auto n = dout.rows();
  dgain += (dout.array() * hat.array()).colwise().sum().matrix();
  dbias += dout.colwise().sum();
  if (dx.rows() != n || dx.cols() != dout.cols()) dx.setZero(n, dout.cols());
  RowVec dhat(dout.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    dhat = dout.row(i).array() * gain.array();
    const float mean_dhat = dhat.mean();
    const float mean_dhat_hat = (dhat.array() * hat.row(i).array()).mean();
    dx.row(i).array() +=
        rstd[static_cast<std::size_t>(i)] * (dhat.array() - mean_dhat - hat.row(i).array() * mean_dhat_hat);
  }
}

float gelu(float x) { return 0.5f * x * (1.0f + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

float gelu_grad(float x) {
  const float t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * x * x);
}

void dropout_mask(Matrix& mask, Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  mask.resize(rows, cols);
  const float keep_scale = static_cast<float>(1.0 / (1.0 - rate));
  const auto threshold = static_cast<std::uint64_t>(rate * 18446744073709551616.0);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng() < threshold ? 0.0f : keep_scale;
}

void check_inputs(const ModelState& state, const SequenceBatch& inputs) {
  const auto& cfg = state.config();
  if (inputs.batch < 1 || inputs.width < 1) throw ContractError("empty input batch");
  if (inputs.tokens.size() != static_cast<std::size_t>(inputs.batch) * inputs.width) {
    throw ContractError("input batch token count does not match its shape");
  }
  if (inputs.width > cfg.max_positions) {
    throw RangeError("sequence length " + std::to_string(inputs.width) + " exceeds max_positions " +
                     std::to_string(cfg.max_positions));
  }
  for (TokenId id : inputs.tokens) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw RangeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(cfg.vocab_size));
    }
  }
}

/// Runs the network up to the final layer norm; fills `cache` with everything backward needs.
void forward_hidden(const ModelState& state, const SequenceBatch& inputs, ForwardCache& cache,
                    const ForwardOptions& options) {
  check_inputs(state, inputs);
  const auto& cfg = state.config();
  const int B = inputs.batch;
  const int T = inputs.width;
  const int d = cfg.d_model;
  const int H = cfg.n_heads;
  const int dh = d / H;
  const Eigen::Index N = static_cast<Eigen::Index>(B) * T;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const bool drop = options.training && cfg.dropout > 0.0;
  if (drop && options.rng == nullptr) throw ContractError("dropout requires a random generator");

  cache.batch = B;
  cache.time = T;
  cache.ids = inputs.tokens;
  cache.blocks.resize(static_cast<std::size_t>(cfg.n_layers));

  const auto wte = cmat(state, state.wte_offset(), cfg.vocab_size, d);
  const auto wpe = cmat(state, state.wpe_offset(), cfg.max_positions, d);
  Matrix x(N, d);
  for (Eigen::Index n = 0; n < N; ++n) {
    x.row(n) = wte.row(inputs.tokens[static_cast<std::size_t>(n)]) + wpe.row(n % T);
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    const BlockLayout& L = state.blocks()[static_cast<std::size_t>(l)];
    BlockCache& bc = cache.blocks[static_cast<std::size_t>(l)];

    layer_norm(x, cvec(state, L.ln1_g, d), cvec(state, L.ln1_b, d), bc.ln1_hat, bc.ln1_out, bc.ln1_rstd);
    bc.qkv.noalias() = bc.ln1_out * cmat(state, L.qkv_w, d, 3 * d);
    bc.qkv.rowwise() += cvec(state, L.qkv_b, 3 * d);

    bc.attn.resize(N, d);
    bc.probs.resize(static_cast<std::size_t>(B) * H);
    for (int b = 0; b < B; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * T;
      for (int h = 0; h < H; ++h) {
        const auto q = bc.qkv.block(r0, h * dh, T, dh);
        const auto k = bc.qkv.block(r0, d + h * dh, T, dh);
        const auto v = bc.qkv.block(r0, 2 * d + h * dh, T, dh);
        Matrix& p = bc.probs[static_cast<std::size_t>(b) * H + h];
        p.noalias() = q * k.transpose();
        for (int i = 0; i < T; ++i) {
          float m = -std::numeric_limits<float>::infinity();
          for (int j = 0; j <= i; ++j) m = std::max(m, p(i, j) * scale);
          float s = 0.0f;
          for (int j = 0; j <= i; ++j) s += (p(i, j) = std::exp(p(i, j) * scale - m));
          const float inv = 1.0f / s;
          for (int j = 0; j <= i; ++j) p(i, j) *= inv;
          for (int j = i + 1; j < T; ++j) p(i, j) = 0.0f;
        }
        bc.attn.block(r0, h * dh, T, dh).noalias() = p * v;
      }
    }
    Matrix proj = bc.attn * cmat(state, L.proj_w, d, d);
    proj.rowwise() += cvec(state, L.proj_b, d);
    if (drop) {
      dropout_mask(bc.attn_drop, N, d, cfg.dropout, *options.rng);
      proj.array() *= bc.attn_drop.array();
    } else {
      bc.attn_drop.resize(0, 0);
    }
    x += proj;

    layer_norm(x, cvec(state, L.ln2_g, d), cvec(state, L.ln2_b, d), bc.ln2_hat, bc.ln2_out, bc.ln2_rstd);
    bc.fc_pre.noalias() = bc.ln2_out * cmat(state, L.fc_w, d, cfg.d_ff);
    bc.fc_pre.rowwise() += cvec(state, L.fc_b, cfg.d_ff);
    bc.fc_act = bc.fc_pre.unaryExpr([](float v) { return gelu(v); });
    Matrix mlp = bc.fc_act * cmat(state, L.out_w, cfg.d_ff, d);
    mlp.rowwise() += cvec(state, L.out_b, d);
    if (drop) {
      dropout_mask(bc.mlp_drop, N, d, cfg.dropout, *options.rng);
      mlp.array() *= bc.mlp_drop.array();
    } else {
      bc.mlp_drop.resize(0, 0);
    }
    x += mlp;
  }

  layer_norm(x, cvec(state, state.lnf_g_offset(), d), cvec(state, state.lnf_b_offset(), d), cache.lnf_hat,
             cache.hidden, cache.lnf_rstd);
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("vocab_size must be >= 5");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_positions < 2) {
    throw ConfigError("model dimensions must be positive (max_positions >= 2)");
  }
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model},           {"n_layers", n_layers},
          {"n_heads", n_heads},       {"d_ff", d_ff},                 {"max_positions", max_positions},
          {"dropout", dropout},       {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::size_t ModelState::add_slot(std::string name, int rows, int cols) {
  TensorSlot s{std::move(name), rows, cols, 0};
  s.offset = slots_.empty() ? 0 : slots_.back().offset + slots_.back().size();
  slots_.push_back(std::move(s));
  return slots_.back().offset;
}

ModelState::ModelState(ModelConfig config, Init init) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  wte_ = add_slot("wte", config_.vocab_size, d);
  wpe_ = add_slot("wpe", config_.max_positions, d);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    BlockLayout b{};
    b.ln1_g = add_slot(p + "ln1.g", 1, d);
    b.ln1_b = add_slot(p + "ln1.b", 1, d);
    b.qkv_w = add_slot(p + "attn.qkv.w", d, 3 * d);
    b.qkv_b = add_slot(p + "attn.qkv.b", 1, 3 * d);
    b.proj_w = add_slot(p + "attn.proj.w", d, d);
    b.proj_b = add_slot(p + "attn.proj.b", 1, d);
    b.ln2_g = add_slot(p + "ln2.g", 1, d);
    b.ln2_b = add_slot(p + "ln2.b", 1, d);
    b.fc_w = add_slot(p + "mlp.fc.w", d, config_.d_ff);
    b.fc_b = add_slot(p + "mlp.fc.b", 1, config_.d_ff);
    b.out_w = add_slot(p + "mlp.proj.w", config_.d_ff, d);
    b.out_b = add_slot(p + "mlp.proj.b", 1, d);
    blocks_.push_back(b);
  }
  lnf_g_ = add_slot("lnf.g", 1, d);
  lnf_b_ = add_slot("lnf.b", 1, d);
  params_.assign(slots_.back().offset + slots_.back().size(), 0.0f);
  if (init == Init::kZero) return;

  std::mt19937_64 rng(config_.seed);
  const double residual_std = 0.02 / std::sqrt(2.0 * config_.n_layers);
  for (const auto& s : slots_) {
    const bool gain = s.name.ends_with(".g");
    const bool bias = s.name.ends_with(".b");
    if (bias) continue;
    float* data = params_.data() + s.offset;
    if (gain) {
      std::fill(data, data + s.size(), 1.0f);
      continue;
    }
    double stddev = 0.02;
    if (s.name == "wpe") stddev = 0.01;
    if (s.name.ends_with("attn.proj.w") || s.name.ends_with("mlp.proj.w")) stddev = residual_std;
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t i = 0; i < s.size(); ++i) data[i] = static_cast<float>(dist(rng));
  }
}

const TensorSlot& ModelState::slot(std::string_view name) const {
  for (const auto& s : slots_) {
    if (s.name == name) return s;
  }
  throw RangeError("no tensor named '" + std::string(name) + "'");
}

MatrixMap ModelState::tensor(std::string_view name) {
  const auto& s = slot(name);
  return {params_.data() + s.offset, s.rows, s.cols};
}

ConstMatrixMap ModelState::tensor(std::string_view name) const {
  const auto& s = slot(name);
  return {params_.data() + s.offset, s.rows, s.cols};
}

// ---------------------------------------------------------------------------

ForwardResult forward(const ModelState& state, const SequenceBatch& inputs, ForwardCache* cache,
                      const ForwardOptions& options) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  forward_hidden(state, inputs, c, options);
  const auto& cfg = state.config();
  ForwardResult r;
  r.logits.noalias() = c.hidden * cmat(state, state.wte_offset(), cfg.vocab_size, cfg.d_model).transpose();
  r.hidden = c.hidden;
  return r;
}

std::vector<float> next_token_logits(const ModelState& state, std::span<const TokenId> context) {
  if (context.empty()) throw ContractError("next_token_logits needs a non-empty context");
  const Matrix logits = next_token_logits_batch(state, {std::vector<TokenId>(context.begin(), context.end())});
  return {logits.data(), logits.data() + logits.size()};
}

Matrix next_token_logits_batch(const ModelState& state, const std::vector<std::vector<TokenId>>& contexts) {
  const SequenceBatch inputs = SequenceBatch::from_sequences(contexts, 0);
  for (const auto& c : contexts) {
    if (static_cast<int>(c.size()) != inputs.width) throw ContractError("contexts must have equal length");
  }
  ForwardCache cache;
  forward_hidden(state, inputs, cache, {});
  const auto& cfg = state.config();
  Matrix last(inputs.batch, cfg.d_model);
  for (int b = 0; b < inputs.batch; ++b) {
    last.row(b) = cache.hidden.row(static_cast<Eigen::Index>(b) * inputs.width + inputs.width - 1);
  }
  Matrix logits = last * cmat(state, state.wte_offset(), cfg.vocab_size, cfg.d_model).transpose();
  return logits;
}

std::vector<float> decode_step(const ModelState& state, DecoderCache& cache, TokenId token) {
  const auto& cfg = state.config();
  const int d = cfg.d_model;
  const int H = cfg.n_heads;
  const int dh = d / H;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  if (token < 0 || token >= cfg.vocab_size) {
    throw RangeError("token id " + std::to_string(token) + " outside vocabulary of size " +
                     std::to_string(cfg.vocab_size));
  }
  if (cache.length >= cfg.max_positions) throw RangeError("decoder cache is full (max_positions reached)");
  if (cache.keys.empty()) {
    cache.keys.assign(static_cast<std::size_t>(cfg.n_layers), Matrix::Zero(cfg.max_positions, d));
    cache.values.assign(static_cast<std::size_t>(cfg.n_layers), Matrix::Zero(cfg.max_positions, d));
  }
  const int pos = cache.length;
  const int len = pos + 1;

  Matrix x = cmat(state, state.wte_offset(), cfg.vocab_size, d).row(token) +
             cmat(state, state.wpe_offset(), cfg.max_positions, d).row(pos);
  Matrix hat, ln;
  std::vector<float> rstd;
  Matrix attn(1, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const BlockLayout& L = state.blocks()[static_cast<std::size_t>(l)];
    Matrix& keys = cache.keys[static_cast<std::size_t>(l)];
    Matrix& values = cache.values[static_cast<std::size_t>(l)];
    layer_norm(x, cvec(state, L.ln1_g, d), cvec(state, L.ln1_b, d), hat, ln, rstd);
    Matrix qkv = ln * cmat(state, L.qkv_w, d, 3 * d);
    qkv += cvec(state, L.qkv_b, 3 * d);
    keys.row(pos) = qkv.block(0, d, 1, d);
    values.row(pos) = qkv.block(0, 2 * d, 1, d);
    for (int h = 0; h < H; ++h) {
      Matrix s = qkv.block(0, h * dh, 1, dh) * keys.block(0, h * dh, len, dh).transpose();
      const float m = (s.array() * scale).maxCoeff();
      s = ((s.array() * scale) - m).exp().matrix();
      s /= s.sum();
      attn.block(0, h * dh, 1, dh).noalias() = s * values.block(0, h * dh, len, dh);
    }
    Matrix proj = attn * cmat(state, L.proj_w, d, d);
    x += proj + cvec(state, L.proj_b, d);

    layer_norm(x, cvec(state, L.ln2_g, d), cvec(state, L.ln2_b, d), hat, ln, rstd);
    Matrix pre = ln * cmat(state, L.fc_w, d, cfg.d_ff);
    pre += cvec(state, L.fc_b, cfg.d_ff);
    const Matrix act = pre.unaryExpr([](float v) { return gelu(v); });
    Matrix mlp = act * cmat(state, L.out_w, cfg.d_ff, d);
    x += mlp + cvec(state, L.out_b, d);
  }
  layer_norm(x, cvec(state, state.lnf_g_offset(), d), cvec(state, state.lnf_b_offset(), d), hat, ln, rstd);
  const Matrix logits = ln * cmat(state, state.wte_offset(), cfg.vocab_size, d).transpose();
  cache.length = len;
  return {logits.data(), logits.data() + logits.size()};
}

ParamGrads backward(const ModelState& state, const ForwardCache& cache, const Matrix& dlogits) {
  const auto& cfg = state.config();
  const int B = cache.batch;
  const int T = cache.time;
  const int d = cfg.d_model;
  const int H = cfg.n_heads;
  const int dh = d / H;
  const Eigen::Index N = static_cast<Eigen::Index>(B) * T;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  if (dlogits.rows() != N || dlogits.cols() != cfg.vocab_size) {
    throw ContractError("dL/dZ shape " + std::to_string(dlogits.rows()) + "x" + std::to_string(dlogits.cols()) +
                        " does not match logits " + std::to_string(N) + "x" + std::to_string(cfg.vocab_size));
  }
  if (cache.blocks.size() != static_cast<std::size_t>(cfg.n_layers) || cache.hidden.rows() != N) {
    throw ContractError("forward cache does not belong to this model");
  }

  ParamGrads grads = state.zero_grads();
  const auto wte = cmat(state, state.wte_offset(), cfg.vocab_size, d);
  auto gwte = gmat(grads, state.wte_offset(), cfg.vocab_size, d);
  auto gwpe = gmat(grads, state.wpe_offset(), cfg.max_positions, d);

  Matrix dh_final = dlogits * wte;
  gwte.noalias() += dlogits.transpose() * cache.hidden;

  Matrix dx;
  layer_norm_backward(dh_final, cache.lnf_hat, cache.lnf_rstd, cvec(state, state.lnf_g_offset(), d),
                      gvec(grads, state.lnf_g_offset(), d), gvec(grads, state.lnf_b_offset(), d), dx);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const BlockLayout& L = state.blocks()[static_cast<std::size_t>(l)];
    const BlockCache& bc = cache.blocks[static_cast<std::size_t>(l)];

    // MLP branch.
    Matrix dmlp = dx;
    if (bc.mlp_drop.size() > 0) dmlp.array() *= bc.mlp_drop.array();
    gvec(grads, L.out_b, d) += dmlp.colwise().sum();
    gmat(grads, L.out_w, cfg.d_ff, d).noalias() += bc.fc_act.transpose() * dmlp;
    Matrix dpre = dmlp * cmat(state, L.out_w, cfg.d_ff, d).transpose();
    dpre.array() *= bc.fc_pre.unaryExpr([](float v) { return gelu_grad(v); }).array();
    gvec(grads, L.fc_b, cfg.d_ff) += dpre.colwise().sum();
    gmat(grads, L.fc_w, d, cfg.d_ff).noalias() += bc.ln2_out.transpose() * dpre;
    Matrix dln2 = dpre * cmat(state, L.fc_w, d, cfg.d_ff).transpose();
    layer_norm_backward(dln2, bc.ln2_hat, bc.ln2_rstd, cvec(state, L.ln2_g, d), gvec(grads, L.ln2_g, d),
                        gvec(grads, L.ln2_b, d), dx);

    // Attention branch.
    Matrix dproj = dx;
    if (bc.attn_drop.size() > 0) dproj.array() *= bc.attn_drop.array();
    gvec(grads, L.proj_b, d) += dproj.colwise().sum();
    gmat(grads, L.proj_w, d, d).noalias() += bc.attn.transpose() * dproj;
    Matrix dattn = dproj * cmat(state, L.proj_w, d, d).transpose();

    Matrix dqkv = Matrix::Zero(N, 3 * d);
    Matrix dp, ds;
    for (int b = 0; b < B; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * T;
      for (int h = 0; h < H; ++h) {
        const Matrix& p = bc.probs[static_cast<std::size_t>(b) * H + h];
        const auto q = bc.qkv.block(r0, h * dh, T, dh);
        const auto k = bc.qkv.block(r0, d + h * dh, T, dh);
        const auto v = bc.qkv.block(r0, 2 * d + h * dh, T, dh);
        const auto dout = dattn.block(r0, h * dh, T, dh);
        dp.noalias() = dout * v.transpose();
        dqkv.block(r0, 2 * d + h * dh, T, dh).noalias() = p.transpose() * dout;
        const Eigen::VectorXf row_dot = (dp.array() * p.array()).rowwise().sum();
        ds = p.array() * (dp.colwise() - row_dot).array();
        ds *= scale;
        dqkv.block(r0, h * dh, T, dh).noalias() = ds * k;
        dqkv.block(r0, d + h * dh, T, dh).noalias() = ds.transpose() * q;
      }
    }
    gvec(grads, L.qkv_b, 3 * d) += dqkv.colwise().sum();
    gmat(grads, L.qkv_w, d, 3 * d).noalias() += bc.ln1_out.transpose() * dqkv;
    Matrix dln1 = dqkv * cmat(state, L.qkv_w, d, 3 * d).transpose();
    layer_norm_backward(dln1, bc.ln1_hat, bc.ln1_rstd, cvec(state, L.ln1_g, d), gvec(grads, L.ln1_g, d),
                        gvec(grads, L.ln1_b, d), dx);
  }

  for (Eigen::Index n = 0; n < N; ++n) {
    gwte.row(cache.ids[static_cast<std::size_t>(n)]) += dx.row(n);
    gwpe.row(n % T) += dx.row(n);
  }
  return grads;
}

// ---------------------------------------------------------------------------

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
}

double AdamConfig::learning_rate_at(int step) const {
  if (step < 1) throw ContractError("Adam step index is 1-based");
  if (warmup_steps > 0 && step <= warmup_steps) return learning_rate * step / warmup_steps;
  return learning_rate;
}

AdamStepInfo adam_step(ModelState& state, std::span<const float> grads, const AdamConfig& config, int step,
                       AdamMoments& moments) {
  config.validate();
  auto params = state.parameters();
  if (grads.size() != params.size()) throw ContractError("gradient size does not match parameter count");
  if (moments.m.size() != params.size()) {
    moments.m.assign(params.size(), 0.0f);
    moments.v.assign(params.size(), 0.0f);
  }

  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      for (const auto& s : state.slots()) {
        if (i >= s.offset && i < s.offset + s.size()) {
          throw TrainingError("non-finite gradient in tensor '" + s.name + "' at element " +
                              std::to_string(i - s.offset) + " (step " + std::to_string(step) + ")");
        }
      }
    }
    sq += static_cast<double>(grads[i]) * grads[i];
  }
  AdamStepInfo info;
  info.grad_norm = std::sqrt(sq);
  info.learning_rate = config.learning_rate_at(step);
  const double clip = (config.clip_norm > 0.0 && info.grad_norm > config.clip_norm)
                          ? config.clip_norm / info.grad_norm
                          : 1.0;

  const double bc1 = 1.0 - std::pow(config.beta1, step);
  const double bc2 = 1.0 - std::pow(config.beta2, step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * clip;
    const double m = config.beta1 * moments.m[i] + (1.0 - config.beta1) * g;
    const double v = config.beta2 * moments.v[i] + (1.0 - config.beta2) * g * g;
    moments.m[i] = static_cast<float>(m);
    moments.v[i] = static_cast<float>(v);
    const double update = info.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + config.epsilon);
    params[i] = static_cast<float>(params[i] - update);
  }
  return info;
}

}  // namespace ctlm
