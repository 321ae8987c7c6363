#pragma once

#include <cstdint>
#include <vector>

#include "mat/rng.hpp"
#include "mat/tensor.hpp"

namespace mat {

// Multi-head scaled dot-product attention parameters. Heads split the model
// width evenly; configurations where heads do not divide d_model are
// rejected. The learned output projection keeps the sublayer width
// preserving so it can sit inside residual connections.
struct AttentionParams {
  std::vector<Tensor> w_q;  // per head, (d_model, d_head)
  std::vector<Tensor> w_k;
  std::vector<Tensor> w_v;
  Tensor w_o;               // (heads*d_head, d_model)
  int heads = 1;
  std::int64_t d_model = 0;

  std::int64_t d_head() const { return d_model / heads; }

  static AttentionParams init(std::int64_t d_model, int heads, Rng& rng);
};

// O_h = softmax(Q_h K_h^T / sqrt(d_head)) V_h per head, heads concatenated
// and passed through the output projection. q is (len_q, d_model), k and v
// are (len_k, d_model).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionParams& params);

// Sinusoidal positional embedding p_t(i) = sin(t * c^(i/d)) for even i and
// cos(t * c^(i/d)) for odd i (0-based), with c a large constant.
struct PositionalEncoding {
  double base = 10000.0;
  std::int64_t width = 0;
};

std::vector<double> positional_embedding(std::int64_t t, const PositionalEncoding& enc);

// Rows 0..len-1 stacked into a (len, width) constant tensor.
Tensor positional_table(std::int64_t len, const PositionalEncoding& enc);

}  // namespace mat
