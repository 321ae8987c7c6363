#include "mat/model.hpp"

#include <cmath>
#include <string>

namespace mat {

void ModelConfig::validate() const {
  if (lookback < 1 || horizon < 1 || channels < 1 || heads < 1) {
    throw ConfigError("config: lookback, horizon, channels and heads must all be >= 1");
  }
  if (n1 < 1 || n2 < 1 || dim < 1 || state < 1 || conv_width < 1) {
    throw ConfigError("config: n1, n2, dim, state and conv_width must all be >= 1");
  }
  if (n1 <= n2) {
    throw ConfigError("config: n1 (" + std::to_string(n1) + ") must exceed n2 (" +
                      std::to_string(n2) + ")");
  }
  if (dim % heads != 0) {
    throw ConfigError("config: heads (" + std::to_string(heads) +
                      ") must divide the attention width dim (" + std::to_string(dim) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("config: dropout must lie in [0,1), got " + std::to_string(dropout));
  }
  if (emb_depth != 1 && emb_depth != 2) {
    throw ConfigError("config: emb_depth must be 1 or 2, got " + std::to_string(emb_depth));
  }
}

// ---------------------------------------------------------------------------
// RevIN
// ---------------------------------------------------------------------------

std::pair<Tensor, RevinState> revin_normalize(const Tensor& x, const Tensor& gamma,
                                              const Tensor& beta) {
  const auto len = x.cols();
  const double inv_len = 1.0 / static_cast<double>(len);

  Tensor mean = scale(sum_axis(x, 1), inv_len);                      // (M,1)
  Tensor centered = sub(x, mean);
  Tensor var = scale(sum_axis(mul(centered, centered), 1), inv_len); // (M,1)
  // max(std, eps) == sqrt(max(var, eps^2)); clamping the variance keeps the
  // sqrt gradient finite for constant rows.
  Tensor stddev = sqrt(clamp_min(var, kRevinEps * kRevinEps));

  Tensor x_hat = div(centered, stddev);
  if (!gamma.empty()) x_hat = add(mul(x_hat, gamma), beta);

  RevinState state;
  state.mean = mean;
  state.stddev = stddev;
  state.gamma = gamma;
  state.beta = beta;
  return {x_hat, state};
}

Tensor revin_denormalize(const Tensor& y, const RevinState& state) {
  Tensor out = y;
  if (!state.gamma.empty()) out = div(sub(out, state.beta), state.gamma);
  return add(mul(out, state.stddev), state.mean);
}

// ---------------------------------------------------------------------------
// Linear stages
// ---------------------------------------------------------------------------

Tensor apply_linear(const Tensor& x, const LinearLayer& layer) {
  return add(matmul(x, layer.w), layer.b);
}

Tensor apply_mlp(const Tensor& x, const std::vector<LinearLayer>& layers) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0) h = silu(h);
    h = apply_linear(h, layers[i]);
  }
  return h;
}

namespace {

LinearLayer init_linear(std::int64_t in, std::int64_t out, Rng& rng) {
  LinearLayer l;
  l.w = Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  l.b = Tensor::zeros({out});
  return l;
}

std::vector<LinearLayer> init_stage(std::int64_t in, std::int64_t out, int depth, Rng& rng) {
  std::vector<LinearLayer> layers;
  if (depth == 1) {
    layers.push_back(init_linear(in, out, rng));
  } else {
    layers.push_back(init_linear(in, out, rng));
    layers.push_back(init_linear(out, out, rng));
  }
  return layers;
}

}  // namespace

// ---------------------------------------------------------------------------
// MAT block
// ---------------------------------------------------------------------------

MatBlockParams MatBlockParams::init(AxisMode mode, std::int64_t token_width,
                                    const ModelConfig& cfg, Rng& rng) {
  MatBlockParams blk;
  blk.mode = mode;
  blk.mamba = SsmParams::init(token_width, cfg.dim, cfg.state, cfg.conv_width, rng);
  blk.attn_lift = Tensor::randn({token_width, cfg.dim}, rng,
                                1.0 / std::sqrt(static_cast<double>(token_width)));
  blk.attn = AttentionParams::init(cfg.dim, cfg.heads, rng);
  blk.attn_unlift = Tensor::randn({cfg.dim, token_width}, rng,
                                  1.0 / std::sqrt(static_cast<double>(cfg.dim)));
  return blk;
}

namespace {

Tensor attention_sublayer(const Tensor& h, const MatBlockParams& blk, const ModelConfig& cfg) {
  Tensor lifted = matmul(h, blk.attn_lift);
  if (cfg.positional) {
    lifted = add(lifted, positional_table(h.rows(), PositionalEncoding{10000.0, cfg.dim}));
  }
  Tensor attended = multi_head_attention(lifted, lifted, lifted, blk.attn);
  return matmul(attended, blk.attn_unlift);
}

// Residual-wrapped sublayer pair on one token sequence (len, width).
Tensor mat_block_sequence(const Tensor& z, const MatBlockParams& blk, const ModelConfig& cfg) {
  if (cfg.block_order == BlockOrder::kMambaFirst) {
    Tensor h = add(z, mamba_block_forward(z, blk.mamba, cfg.scan_path));
    return add(h, attention_sublayer(h, blk, cfg));
  }
  Tensor h = add(z, attention_sublayer(z, blk, cfg));
  return add(h, mamba_block_forward(h, blk.mamba, cfg.scan_path));
}

}  // namespace

Tensor mat_block_forward(const Tensor& z, const MatBlockParams& block, const ModelConfig& cfg) {
  if (block.mode == AxisMode::kChannel) {
    // Channels are the sequence tokens, each of width n_level.
    return mat_block_sequence(z, block, cfg);
  }
  // Temporal mode: each channel row is an independent sequence of width-1
  // tokens; weights are shared across channels.
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(z.rows()));
  for (std::int64_t c = 0; c < z.rows(); ++c) {
    Tensor seq = transpose(slice_rows(z, c, c + 1));  // (n_level, 1)
    rows.push_back(transpose(mat_block_sequence(seq, block, cfg)));
  }
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  if (cfg.revin_affine) {
    p.revin_gamma = Tensor::full({cfg.channels, 1}, 1.0);
    p.revin_beta = Tensor::zeros({cfg.channels, 1});
  }
  p.emb1 = init_stage(cfg.lookback, cfg.n1, cfg.emb_depth, rng);
  p.emb2 = init_stage(cfg.n1, cfg.n2, cfg.emb_depth, rng);
  p.block_t1 = MatBlockParams::init(AxisMode::kTemporal, 1, cfg, rng);
  p.block_c1 = MatBlockParams::init(AxisMode::kChannel, cfg.n1, cfg, rng);
  p.block_t2 = MatBlockParams::init(AxisMode::kTemporal, 1, cfg, rng);
  p.block_c2 = MatBlockParams::init(AxisMode::kChannel, cfg.n2, cfg, rng);
  p.proj1 = init_linear(cfg.n2, cfg.n1, rng);
  p.proj2 = init_linear(cfg.n1, cfg.horizon, rng);
  return p;
}

ModelParams bind_params(Tape& tape, const ModelParams& params) {
  ModelParams bound = params;
  visit_params(bound, [&](const std::string&, Tensor& t) { t = tape.leaf(t, true); });
  return bound;
}

void zero_mat_blocks(ModelParams& params) {
  auto zero_block = [](MatBlockParams& blk) {
    auto zero = [](Tensor& t) { t = Tensor::zeros(t.shape()); };
    zero(blk.mamba.in_proj);
    zero(blk.mamba.gate_proj);
    zero(blk.mamba.conv_kernel);
    zero(blk.mamba.conv_bias);
    zero(blk.mamba.w_delta);
    zero(blk.mamba.b_delta);
    zero(blk.mamba.w_b);
    zero(blk.mamba.w_c);
    zero(blk.mamba.a_log);
    zero(blk.mamba.d_feed);
    zero(blk.mamba.out_proj);
    zero(blk.attn_lift);
    for (auto& t : blk.attn.w_q) zero(t);
    for (auto& t : blk.attn.w_k) zero(t);
    for (auto& t : blk.attn.w_v) zero(t);
    zero(blk.attn.w_o);
    zero(blk.attn_unlift);
  };
  zero_block(params.block_t1);
  zero_block(params.block_c1);
  zero_block(params.block_t2);
  zero_block(params.block_c2);
}

std::int64_t count_params(const ModelParams& params) {
  std::int64_t n = 0;
  visit_params(const_cast<ModelParams&>(params),
               [&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

Tensor model_forward(const Tensor& x, const ModelParams& params, const ModelConfig& cfg,
                     DropoutMode mode, Rng& rng) {
  if (x.shape().size() != 2 || x.rows() != cfg.channels || x.cols() != cfg.lookback) {
    throw DimensionError("forward: input stage expects (" + std::to_string(cfg.channels) + "," +
                         std::to_string(cfg.lookback) + "), got " + shape_str(x.shape()));
  }

  auto [x_hat, revin] = revin_normalize(x, params.revin_gamma, params.revin_beta);

  Tensor x1 = apply_mlp(x_hat, params.emb1);  // (M, n1)
  if (x1.cols() != cfg.n1) {
    throw DimensionError("forward: embed_stage1 produced width " + std::to_string(x1.cols()) +
                         ", expected n1 " + std::to_string(cfg.n1));
  }

  // Level 1 (high resolution): temporal and channel blocks, fused additively.
  Tensor f2 = add(mat_block_forward(x1, params.block_t1, cfg),
                  mat_block_forward(x1, params.block_c1, cfg));  // (M, n1)

  Tensor x2 = apply_mlp(x1, params.emb2);  // (M, n2)
  x2 = dropout(x2, cfg.dropout, mode, rng);
  if (x2.cols() != cfg.n2) {
    throw DimensionError("forward: embed_stage2 produced width " + std::to_string(x2.cols()) +
                         ", expected n2 " + std::to_string(cfg.n2));
  }

  // Level 2 (low resolution).
  Tensor f1 = add(mat_block_forward(x2, params.block_t2, cfg),
                  mat_block_forward(x2, params.block_c2, cfg));  // (M, n2)

  Tensor up = apply_linear(f1, params.proj1);  // (M, n1)
  if (up.cols() != cfg.n1) {
    throw DimensionError("forward: proj1 produced width " + std::to_string(up.cols()) +
                         ", expected n1 " + std::to_string(cfg.n1));
  }
  Tensor fused = add(up, f2);
  Tensor out = apply_linear(fused, params.proj2);  // (M, T)
  if (out.cols() != cfg.horizon) {
    throw DimensionError("forward: proj2 produced width " + std::to_string(out.cols()) +
                         ", expected horizon " + std::to_string(cfg.horizon));
  }
  return revin_denormalize(out, revin);
}

}  // namespace mat
