#pragma once

#include <cstdint>

#include "mat/rng.hpp"
#include "mat/scan.hpp"
#include "mat/tensor.hpp"

namespace mat {

// Parameters of one selective-SSM (Mamba style) block operating on sequences
// of `width`-wide tokens. The diagonal state matrix is kept in log space,
// A = -exp(a_log), so the continuous-time dynamics stay strictly stable; the
// per-step discretization interval comes out of a softplus, so it stays
// positive.
struct SsmParams {
  Tensor in_proj;      // (width, d_inner)
  Tensor gate_proj;    // (width, d_inner)
  Tensor conv_kernel;  // (d_inner, conv_width), last column = current step
  Tensor conv_bias;    // (d_inner)
  Tensor w_delta;      // (d_inner, d_inner)
  Tensor b_delta;      // (d_inner)
  Tensor w_b;          // (d_inner, state_size)
  Tensor w_c;          // (d_inner, state_size)
  Tensor a_log;        // (d_inner, state_size)
  Tensor d_feed;       // (d_inner) feedthrough
  Tensor out_proj;     // (d_inner, width)

  std::int64_t width = 0;
  std::int64_t d_inner = 0;
  std::int64_t state_size = 0;
  std::int64_t conv_width = 2;

  static SsmParams init(std::int64_t width, std::int64_t d_inner, std::int64_t state_size,
                        std::int64_t conv_width, Rng& rng);
};

// Selective scan over a full sequence: inputs are time-major.
//   u      (len, d_inner)  driving sequence (also the feedthrough input)
//   delta  (len, d_inner)  positive step sizes per lane
//   b_seq  (len, state)    input projections B_k
//   c_seq  (len, state)    readout projections C_k
//   a_diag (d_inner, state) diagonal continuous-time state matrix
//   d_feed (d_inner)       feedthrough vector
// Discretizes with the zero-order hold, runs the linear recurrence along the
// requested path, and reads out y_k = C_k . x_k + d_feed * u_k. Fully
// differentiable.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& b_seq,
                      const Tensor& c_seq, const Tensor& a_diag, const Tensor& d_feed,
                      ScanPath path);

// Full Mamba-style block: input projection, causal depthwise convolution,
// SiLU, input-dependent (delta, B, C), selective scan, SiLU gate, output
// projection. Shape preserving on (len, width).
Tensor mamba_block_forward(const Tensor& z, const SsmParams& params,
                           ScanPath path = ScanPath::kParallel);

}  // namespace mat
