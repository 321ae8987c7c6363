#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mat/attention.hpp"
#include "mat/gradcheck.hpp"
#include "test_util.hpp"

using namespace mat;

namespace {

AttentionParams identity_params_1d() {
  AttentionParams p;
  p.heads = 1;
  p.d_model = 1;
  p.w_q = {Tensor({1, 1}, {1.0})};
  p.w_k = {Tensor({1, 1}, {1.0})};
  p.w_v = {Tensor({1, 1}, {1.0})};
  p.w_o = Tensor({1, 1}, {1.0});
  return p;
}

}  // namespace

TEST_CASE("single key: softmax over one entry is one") {
  Rng rng(3);
  AttentionParams p = AttentionParams::init(4, 2, rng);
  Tensor q = Tensor::randn({3, 4}, rng);
  Tensor kv = Tensor::randn({1, 4}, rng);
  Tensor out = multi_head_attention(q, kv, kv, p);
  // Every query row attends to the single key with weight one, so all rows
  // equal the projected single value row.
  for (std::int64_t r = 1; r < out.rows(); ++r) {
    for (std::int64_t c = 0; c < out.cols(); ++c) {
      CHECK(out.at(r, c) == doctest::Approx(out.at(0, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("identical keys: output is the mean of projected values") {
  Rng rng(5);
  AttentionParams p = AttentionParams::init(4, 1, rng);
  Tensor q = Tensor::randn({2, 4}, rng);
  Tensor key_row = Tensor::randn({1, 4}, rng);
  std::vector<Tensor> krows(5, key_row);
  Tensor k = concat_rows(krows);
  Tensor v = Tensor::randn({5, 4}, rng);

  Tensor out = multi_head_attention(q, k, v, p);

  Tensor v_mean = scale(sum_axis(transpose(matmul(v, p.w_v[0])), 1), 1.0 / 5.0);  // (dh,1)
  Tensor expect = matmul(transpose(v_mean), p.w_o);
  for (std::int64_t c = 0; c < out.cols(); ++c) {
    CHECK(out.at(0, c) == doctest::Approx(expect.at(0, c)).epsilon(1e-12));
    CHECK(out.at(1, c) == doctest::Approx(expect.at(0, c)).epsilon(1e-12));
  }
}

TEST_CASE("hand-computed case: d_head=1, identity projections") {
  AttentionParams p = identity_params_1d();
  Tensor q({2, 1}, {1.0, 0.0});
  Tensor k({2, 1}, {1.0, 0.0});
  Tensor v({2, 1}, {2.0, 4.0});
  Tensor out = multi_head_attention(q, k, v, p);
  const double e = std::exp(1.0);
  const double w1 = e / (e + 1.0);  // 0.7311
  CHECK(out.at(0, 0) == doctest::Approx(2.0 * w1 + 4.0 * (1.0 - w1)).epsilon(1e-12));
  CHECK(out.at(0, 0) == doctest::Approx(2.5379).epsilon(1e-4));
  CHECK(out.at(1, 0) == doctest::Approx(3.0).epsilon(1e-12));  // logits [0,0] -> mean
}

TEST_CASE("width mismatch raises a dimension error") {
  Rng rng(9);
  AttentionParams p = AttentionParams::init(4, 2, rng);
  Tensor q = Tensor::randn({3, 5}, rng);
  Tensor kv = Tensor::randn({3, 4}, rng);
  CHECK_THROWS_AS(multi_head_attention(q, kv, kv, p), DimensionError);
}

TEST_CASE("heads must divide the model width") {
  Rng rng(2);
  CHECK_THROWS_AS(AttentionParams::init(5, 2, rng), ConfigError);
}

TEST_CASE("attention rows sum to one") {
  // Checked through shift invariance of the output: adding a constant to all
  // value rows shifts each output row by exactly W_o^T(c) iff weights sum to 1.
  Rng rng(13);
  AttentionParams p = AttentionParams::init(6, 3, rng);
  Tensor q = Tensor::randn({4, 6}, rng);
  Tensor k = Tensor::randn({5, 6}, rng);
  Tensor v = Tensor::randn({5, 6}, rng);
  Tensor out1 = multi_head_attention(q, k, v, p);
  Tensor shift = Tensor::full({1, 6}, 3.25);
  std::vector<Tensor> rows(5, shift);
  Tensor vs = add(v, concat_rows(rows));
  Tensor out_shifted = multi_head_attention(q, k, vs, p);
  // Attention over constant values collapses to the projected constant, so
  // the difference of the two runs equals it exactly iff weights sum to 1.
  Tensor blank = multi_head_attention(q, k, concat_rows(rows), p);
  for (std::int64_t r = 0; r < 4; ++r) {
    for (std::int64_t c = 0; c < 6; ++c) {
      CHECK(out_shifted.at(r, c) - out1.at(r, c) ==
            doctest::Approx(blank.at(0, c)).epsilon(1e-10));
    }
  }
}

TEST_CASE("attention is permutation-invariant over key/value rows") {
  Rng rng(21);
  AttentionParams p = AttentionParams::init(4, 2, rng);
  Tensor q = Tensor::randn({5, 4}, rng);
  Tensor k = Tensor::randn({5, 4}, rng);
  Tensor v = Tensor::randn({5, 4}, rng);
  Tensor base = multi_head_attention(q, k, v, p);

  std::vector<std::int64_t> perm = {3, 0, 4, 1, 2};
  std::vector<Tensor> krows, vrows;
  for (auto i : perm) {
    krows.push_back(slice_rows(k, i, i + 1));
    vrows.push_back(slice_rows(v, i, i + 1));
  }
  Tensor out = multi_head_attention(q, concat_rows(krows), concat_rows(vrows), p);
  CHECK(testutil::max_abs_diff(base.values(), out.values()) < 1e-12);
}

TEST_CASE("attention sublayer gradient check") {
  Rng rng(31);
  AttentionParams p = AttentionParams::init(4, 2, rng);
  Tensor x = Tensor::randn({5, 4}, rng);
  std::vector<Tensor> leaves = {x,        p.w_q[0], p.w_q[1], p.w_k[0],
                                p.w_k[1], p.w_v[0], p.w_v[1], p.w_o};
  auto report = grad_check_multi(
      [&](Tape&, std::vector<Tensor>& ls) {
        AttentionParams bound = p;
        bound.w_q = {ls[1], ls[2]};
        bound.w_k = {ls[3], ls[4]};
        bound.w_v = {ls[5], ls[6]};
        bound.w_o = ls[7];
        Tensor y = multi_head_attention(ls[0], ls[0], ls[0], bound);
        Rng w(17);
        return sum_all(mul(y, Tensor::randn(y.shape(), w)));
      },
      leaves);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("positional embedding formula") {
  PositionalEncoding enc{10000.0, 2};
  auto p0 = positional_embedding(0, enc);
  CHECK(p0[0] == 0.0);  // sin 0
  CHECK(p0[1] == 1.0);  // cos 0

  auto p1 = positional_embedding(1, enc);
  CHECK(p1[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(p1[1] == doctest::Approx(std::cos(100.0)).epsilon(1e-15));  // c^(1/2) = 100

  PositionalEncoding wide{10000.0, 16};
  for (std::int64_t t : {0, 1, 5, 999}) {
    for (double v : positional_embedding(t, wide)) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK_THROWS_AS(positional_embedding(-1, enc), ContractError);
}

TEST_CASE("positional table stacks embeddings") {
  PositionalEncoding enc{10000.0, 4};
  Tensor table = positional_table(3, enc);
  CHECK(table.shape() == Shape{3, 4});
  auto row2 = positional_embedding(2, enc);
  for (std::int64_t c = 0; c < 4; ++c) {
    CHECK(table.at(2, c) == doctest::Approx(row2[static_cast<std::size_t>(c)]).epsilon(1e-15));
  }
}
