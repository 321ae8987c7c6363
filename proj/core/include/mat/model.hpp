#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mat/attention.hpp"
#include "mat/rng.hpp"
#include "mat/ssm.hpp"
#include "mat/tensor.hpp"

namespace mat {

enum class BlockOrder { kMambaFirst, kAttentionFirst };
enum class AxisMode { kTemporal, kChannel };

// Architectural hyperparameters of the forecaster.
struct ModelConfig {
  std::int64_t lookback = 96;   // L
  std::int64_t horizon = 96;    // T
  std::int64_t channels = 21;   // M
  std::int64_t n1 = 256;        // stage-1 embedded width
  std::int64_t n2 = 128;        // stage-2 embedded width, n1 > n2
  std::int64_t dim = 256;       // D: SSM inner width and attention width
  std::int64_t state = 1;       // N: SSM state size per inner channel
  int heads = 8;                // H
  std::int64_t conv_width = 2;
  double dropout = 0.1;
  bool revin_affine = true;
  bool positional = false;      // sinusoidal embeddings inside attention sublayers
  int emb_depth = 1;            // 1 = linear stages, 2 = two-layer MLP with SiLU
  BlockOrder block_order = BlockOrder::kMambaFirst;
  ScanPath scan_path = ScanPath::kParallel;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

// Per-instance normalization statistics captured on the look-back window and
// replayed by the inverse transform. The guarded std is never below the
// epsilon floor.
struct RevinState {
  Tensor mean;    // (M, 1)
  Tensor stddev;  // (M, 1), >= kRevinEps
  Tensor gamma;   // (M, 1) or empty
  Tensor beta;    // (M, 1) or empty
};

inline constexpr double kRevinEps = 1e-8;

// x_hat = gamma * (x - mean) / max(std, eps) + beta, per channel row.
// gamma/beta may be empty tensors for the affine-free variant.
std::pair<Tensor, RevinState> revin_normalize(const Tensor& x, const Tensor& gamma,
                                              const Tensor& beta);
// Exact algebraic inverse using the stored look-back statistics.
Tensor revin_denormalize(const Tensor& y, const RevinState& state);

// y = x W + b applied row-wise.
struct LinearLayer {
  Tensor w;
  Tensor b;
};

Tensor apply_linear(const Tensor& x, const LinearLayer& layer);
// Multi-layer stage; SiLU between layers when there are two.
Tensor apply_mlp(const Tensor& x, const std::vector<LinearLayer>& layers);

// One MAT block: a Mamba sublayer and a multi-head-attention sublayer, each
// residual wrapped. The attention sublayer lifts tokens to the configured
// attention width and projects back, so the block is shape preserving for
// any token width (temporal mode runs width-1 tokens).
struct MatBlockParams {
  SsmParams mamba;
  Tensor attn_lift;    // (token_width, dim)
  AttentionParams attn;
  Tensor attn_unlift;  // (dim, token_width)
  AxisMode mode = AxisMode::kTemporal;

  static MatBlockParams init(AxisMode mode, std::int64_t token_width, const ModelConfig& cfg,
                             Rng& rng);
};

Tensor mat_block_forward(const Tensor& z, const MatBlockParams& block, const ModelConfig& cfg);

// All learnable state of the model.
struct ModelParams {
  Tensor revin_gamma;  // (M, 1), empty when affine is off
  Tensor revin_beta;   // (M, 1), empty when affine is off
  std::vector<LinearLayer> emb1;  // L  -> n1
  std::vector<LinearLayer> emb2;  // n1 -> n2
  MatBlockParams block_t1, block_c1;  // level 1 (width n1)
  MatBlockParams block_t2, block_c2;  // level 2 (width n2)
  LinearLayer proj1;  // n2 -> n1
  LinearLayer proj2;  // n1 -> T

  static ModelParams init(const ModelConfig& cfg, Rng& rng);
};

// Enumerates every parameter tensor in a fixed canonical order; this order
// defines the checkpoint layout and the optimizer state alignment.
template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
  auto linear = [&](const std::string& prefix, auto& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      fn(prefix + "." + std::to_string(i) + ".w", layers[i].w);
      fn(prefix + "." + std::to_string(i) + ".b", layers[i].b);
    }
  };
  auto block = [&](const std::string& prefix, auto& blk) {
    fn(prefix + ".mamba.in_proj", blk.mamba.in_proj);
    fn(prefix + ".mamba.gate_proj", blk.mamba.gate_proj);
    fn(prefix + ".mamba.conv_kernel", blk.mamba.conv_kernel);
    fn(prefix + ".mamba.conv_bias", blk.mamba.conv_bias);
    fn(prefix + ".mamba.w_delta", blk.mamba.w_delta);
    fn(prefix + ".mamba.b_delta", blk.mamba.b_delta);
    fn(prefix + ".mamba.w_b", blk.mamba.w_b);
    fn(prefix + ".mamba.w_c", blk.mamba.w_c);
    fn(prefix + ".mamba.a_log", blk.mamba.a_log);
    fn(prefix + ".mamba.d_feed", blk.mamba.d_feed);
    fn(prefix + ".mamba.out_proj", blk.mamba.out_proj);
    fn(prefix + ".attn.lift", blk.attn_lift);
    for (std::size_t h = 0; h < blk.attn.w_q.size(); ++h) {
      fn(prefix + ".attn.w_q." + std::to_string(h), blk.attn.w_q[h]);
      fn(prefix + ".attn.w_k." + std::to_string(h), blk.attn.w_k[h]);
      fn(prefix + ".attn.w_v." + std::to_string(h), blk.attn.w_v[h]);
    }
    fn(prefix + ".attn.w_o", blk.attn.w_o);
    fn(prefix + ".attn.unlift", blk.attn_unlift);
  };

  if (!p.revin_gamma.empty()) fn("revin.gamma", p.revin_gamma);
  if (!p.revin_beta.empty()) fn("revin.beta", p.revin_beta);
  linear("emb1", p.emb1);
  linear("emb2", p.emb2);
  block("block_t1", p.block_t1);
  block("block_c1", p.block_c1);
  block("block_t2", p.block_t2);
  block("block_c2", p.block_c2);
  fn("proj1.w", p.proj1.w);
  fn("proj1.b", p.proj1.b);
  fn("proj2.w", p.proj2.w);
  fn("proj2.b", p.proj2.b);
}

// Copy of the parameters with every tensor registered as a gradient leaf.
ModelParams bind_params(Tape& tape, const ModelParams& params);

// Zeroes every weight inside the four MAT blocks (both sublayers), turning
// each block into the identity; the EMB/Proj pipeline is untouched.
void zero_mat_blocks(ModelParams& params);

std::int64_t count_params(const ModelParams& params);

// Full forward pass (M, L) -> (M, T): RevIN, two-stage embedding, two levels
// of temporal+channel MAT blocks with additive fusion, two-stage projection
// with the residual combine, inverse RevIN.
Tensor model_forward(const Tensor& x, const ModelParams& params, const ModelConfig& cfg,
                     DropoutMode mode, Rng& rng);

}  // namespace mat
