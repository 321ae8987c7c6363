#include "mat/attention.hpp"

#include <cmath>
#include <string>

namespace mat {

AttentionParams AttentionParams::init(std::int64_t d_model, int heads, Rng& rng) {
  if (heads < 1 || d_model < 1) {
    throw ConfigError("AttentionParams: heads and d_model must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("AttentionParams: heads (" + std::to_string(heads) +
                      ") must divide d_model (" + std::to_string(d_model) + ")");
  }
  AttentionParams p;
  p.heads = heads;
  p.d_model = d_model;
  const auto dh = d_model / heads;
  const double std_in = 1.0 / std::sqrt(static_cast<double>(d_model));
  for (int h = 0; h < heads; ++h) {
    p.w_q.push_back(Tensor::randn({d_model, dh}, rng, std_in));
    p.w_k.push_back(Tensor::randn({d_model, dh}, rng, std_in));
    p.w_v.push_back(Tensor::randn({d_model, dh}, rng, std_in));
  }
  p.w_o = Tensor::randn({d_model, d_model}, rng, std_in);
  return p;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionParams& params) {
  if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2 ||
      q.cols() != params.d_model || k.cols() != params.d_model || v.cols() != params.d_model) {
    throw DimensionError("multi_head_attention: widths " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()) +
                         " must all equal d_model " + std::to_string(params.d_model));
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("multi_head_attention: key rows " + std::to_string(k.rows()) +
                         " differ from value rows " + std::to_string(v.rows()));
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(params.d_head()));

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(params.heads));
  for (int h = 0; h < params.heads; ++h) {
    const auto hi = static_cast<std::size_t>(h);
    Tensor qh = matmul(q, params.w_q[hi]);
    Tensor kh = matmul(k, params.w_k[hi]);
    Tensor vh = matmul(v, params.w_v[hi]);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    Tensor weights = softmax(scores, /*axis=*/1);
    head_outputs.push_back(matmul(weights, vh));
  }
  Tensor concat = (params.heads == 1) ? head_outputs[0] : concat_cols(head_outputs);
  return matmul(concat, params.w_o);
}

std::vector<double> positional_embedding(std::int64_t t, const PositionalEncoding& enc) {
  if (t < 0) throw ContractError("positional_embedding: time index must be nonnegative");
  std::vector<double> p(static_cast<std::size_t>(enc.width));
  const double td = static_cast<double>(t);
  for (std::int64_t i = 0; i < enc.width; ++i) {
    const double freq = std::pow(enc.base, static_cast<double>(i) / static_cast<double>(enc.width));
    p[static_cast<std::size_t>(i)] = (i % 2 == 0) ? std::sin(td * freq) : std::cos(td * freq);
  }
  return p;
}

Tensor positional_table(std::int64_t len, const PositionalEncoding& enc) {
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(len * enc.width));
  for (std::int64_t t = 0; t < len; ++t) {
    auto p = positional_embedding(t, enc);
    rows.insert(rows.end(), p.begin(), p.end());
  }
  return Tensor({len, enc.width}, std::move(rows));
}

}  // namespace mat
