#include "mat/gradsuite.hpp"

#include <cmath>

#include "mat/attention.hpp"
#include "mat/model.hpp"
#include "mat/ssm.hpp"

namespace mat {

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.lookback = 8;
  cfg.horizon = 4;
  cfg.n1 = 8;
  cfg.n2 = 4;
  cfg.dim = 4;
  cfg.state = 1;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.seed = 7;
  return cfg;
}

void check(GradSuiteResult& out, const std::string& name, double err, double tol) {
  out.entries.push_back({name, err, err < tol});
  out.worst = std::max(out.worst, err);
  out.pass = out.pass && err < tol;
}

// Reduce any op output to a scalar with fixed random weights so the check
// exercises every output coordinate.
Tensor weigh(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = Tensor::randn(t.shape(), rng);
  return sum_all(mul(t, w));
}

}  // namespace

GradSuiteResult run_gradient_suite(double tolerance) {
  GradSuiteResult out;
  Rng rng(20240901);

  const Tensor x34 = Tensor::randn({3, 4}, rng);
  const Tensor x43 = Tensor::randn({4, 3}, rng);
  const Tensor x4 = Tensor::randn({4}, rng);
  Tensor sq44 = Tensor::randn({4, 4}, rng);
  const Tensor pos44 = add_scalar(mul(sq44, sq44), 0.5);

  auto unary_case = [&](const std::string& name, auto op, const Tensor& x) {
    double err = grad_check(
        [&](Tape&, const Tensor& xb) { return weigh(op(xb), 11); }, x);
    check(out, name, err, tolerance);
  };

  unary_case("elementwise.exp", [](const Tensor& t) { return exp(t); }, x34);
  unary_case("elementwise.expm1", [](const Tensor& t) { return expm1(t); }, x34);
  unary_case("elementwise.softplus", [](const Tensor& t) { return softplus(t); }, x34);
  unary_case("elementwise.silu", [](const Tensor& t) { return silu(t); }, x34);
  unary_case("elementwise.scale", [](const Tensor& t) { return scale(t, -2.5); }, x34);
  unary_case("elementwise.sqrt", [](const Tensor& t) { return sqrt(t); }, pos44);
  unary_case("softmax.rows", [](const Tensor& t) { return softmax(t, 1); }, x34);
  unary_case("softmax.cols", [](const Tensor& t) { return softmax(t, 0); }, x34);
  unary_case("transpose", [](const Tensor& t) { return transpose(t); }, x34);
  unary_case("sum_axis", [](const Tensor& t) { return sum_axis(t, 1); }, x34);
  unary_case("repeat_cols", [](const Tensor& t) { return repeat_cols(t, 3); }, x34);
  unary_case("tile_cols", [](const Tensor& t) { return tile_cols(t, 3); }, x34);
  unary_case("sum_col_groups", [](const Tensor& t) { return sum_col_groups(t, 2); }, x34);

  // Binary ops, gradients through both operands including broadcasts.
  {
    Tensor b = Tensor::randn({3, 4}, rng);
    Tensor row = Tensor::randn({3, 1}, rng);
    Tensor suf = Tensor::randn({4}, rng);
    auto binary_case = [&](const std::string& name, auto op, const Tensor& lhs,
                           const Tensor& rhs) {
      double err = grad_check_multi(
                       [&](Tape&, std::vector<Tensor>& leaves) {
                         return weigh(op(leaves[0], leaves[1]), 13);
                       },
                       {lhs, rhs})
                       .max_rel_error;
      check(out, name, err, tolerance);
    };
    binary_case("elementwise.add", [](const Tensor& l, const Tensor& r) { return add(l, r); },
                x34, b);
    binary_case("elementwise.sub", [](const Tensor& l, const Tensor& r) { return sub(l, r); },
                x34, b);
    binary_case("elementwise.mul", [](const Tensor& l, const Tensor& r) { return mul(l, r); },
                x34, b);
    binary_case("elementwise.div",
                [](const Tensor& l, const Tensor& r) { return div(l, add_scalar(mul(r, r), 0.5)); },
                x34, b);
    binary_case("broadcast.row", [](const Tensor& l, const Tensor& r) { return mul(l, r); }, x34,
                row);
    binary_case("broadcast.suffix", [](const Tensor& l, const Tensor& r) { return add(l, r); },
                x34, suf);
    binary_case("matmul", [](const Tensor& l, const Tensor& r) { return matmul(l, r); }, x34, x43);
    binary_case("zoh_drive",
                [](const Tensor& l, const Tensor& r) {
                  return zoh_drive(softplus(l), scale(exp(r), -1.0));
                },
                x34, b);
    binary_case("scan.sequential",
                [](const Tensor& l, const Tensor& r) {
                  return scan_states(scale(silu(l), 0.2), r, ScanPath::kSequential);
                },
                x34, b);
    binary_case("scan.parallel",
                [](const Tensor& l, const Tensor& r) {
                  return scan_states(scale(silu(l), 0.2), r, ScanPath::kParallel);
                },
                x34, b);
    binary_case("causal_conv1d",
                [&](const Tensor& l, const Tensor& r) {
                  return causal_conv1d(l, r, Tensor::zeros({4}));
                },
                x34, Tensor::randn({4, 2}, rng));
  }

  // Dropout with a fixed mask stream.
  {
    double err = grad_check(
        [](Tape&, const Tensor& xb) {
          Rng drop_rng(99);
          return weigh(dropout(xb, 0.5, DropoutMode::kTrain, drop_rng), 17);
        },
        Tensor::randn({6, 6}, rng));
    check(out, "dropout.train", err, tolerance);
  }

  // Attention sublayer at toy width.
  {
    Rng prng(31);
    AttentionParams ap = AttentionParams::init(4, 2, prng);
    Tensor q = Tensor::randn({5, 4}, rng);
    std::vector<Tensor> leaves = {q};
    leaves.push_back(ap.w_q[0]);
    leaves.push_back(ap.w_q[1]);
    leaves.push_back(ap.w_k[0]);
    leaves.push_back(ap.w_k[1]);
    leaves.push_back(ap.w_v[0]);
    leaves.push_back(ap.w_v[1]);
    leaves.push_back(ap.w_o);
    double err = grad_check_multi(
                     [&](Tape&, std::vector<Tensor>& ls) {
                       AttentionParams bound = ap;
                       bound.w_q = {ls[1], ls[2]};
                       bound.w_k = {ls[3], ls[4]};
                       bound.w_v = {ls[5], ls[6]};
                       bound.w_o = ls[7];
                       return weigh(multi_head_attention(ls[0], ls[0], ls[0], bound), 19);
                     },
                     leaves)
                     .max_rel_error;
    check(out, "attention.sublayer", err, tolerance);
  }

  // Selective scan and the full Mamba block.
  {
    Rng prng(41);
    SsmParams sp = SsmParams::init(/*width=*/3, /*d_inner=*/4, /*state=*/2, /*conv_width=*/2, prng);
    Tensor z = Tensor::randn({6, 3}, rng);
    std::vector<Tensor> leaves = {z};
    std::vector<Tensor*> slots = {&sp.in_proj, &sp.gate_proj, &sp.conv_kernel, &sp.conv_bias,
                                  &sp.w_delta, &sp.b_delta,   &sp.w_b,         &sp.w_c,
                                  &sp.a_log,   &sp.d_feed,    &sp.out_proj};
    for (auto* t : slots) leaves.push_back(*t);
    double err = grad_check_multi(
                     [&](Tape&, std::vector<Tensor>& ls) {
                       SsmParams bound = sp;
                       std::vector<Tensor*> bslots = {
                           &bound.in_proj, &bound.gate_proj, &bound.conv_kernel, &bound.conv_bias,
                           &bound.w_delta, &bound.b_delta,   &bound.w_b,         &bound.w_c,
                           &bound.a_log,   &bound.d_feed,    &bound.out_proj};
                       for (std::size_t i = 0; i < bslots.size(); ++i) *bslots[i] = ls[i + 1];
                       return weigh(mamba_block_forward(ls[0], bound, ScanPath::kParallel), 23);
                     },
                     leaves)
                     .max_rel_error;
    check(out, "mamba.block", err, tolerance);
  }

  // RevIN pair.
  {
    double err = grad_check(
        [](Tape&, const Tensor& xb) {
          auto [xh, st] = revin_normalize(xb, Tensor{}, Tensor{});
          return weigh(revin_denormalize(exp(xh), st), 29);
        },
        Tensor::randn({3, 8}, rng));
    check(out, "revin.pair", err, tolerance);
  }

  // Full model at toy dimensions: gradients through every parameter and the
  // input, dropout off (eval mode) for determinism.
  {
    ModelConfig cfg = toy_config();
    Rng prng(cfg.seed);
    ModelParams params = ModelParams::init(cfg, prng);
    Tensor x = Tensor::randn({cfg.channels, cfg.lookback}, rng);
    Tensor target = Tensor::randn({cfg.channels, cfg.horizon}, rng);

    std::vector<Tensor> leaves;
    visit_params(params, [&](const std::string&, Tensor& t) { leaves.push_back(t); });
    leaves.push_back(x);

    double err = grad_check_multi(
                     [&](Tape&, std::vector<Tensor>& ls) {
                       ModelParams bound = params;
                       std::size_t i = 0;
                       visit_params(bound, [&](const std::string&, Tensor& t) { t = ls[i++]; });
                       Rng fwd_rng(1);
                       Tensor pred = model_forward(ls.back(), bound, cfg, DropoutMode::kEval, fwd_rng);
                       return mse(pred, target);
                     },
                     leaves)
                     .max_rel_error;
    check(out, "model.full_toy", err, tolerance);
  }

  return out;
}

}  // namespace mat
