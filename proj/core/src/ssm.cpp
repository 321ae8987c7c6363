#include "mat/ssm.hpp"

#include <cmath>
#include <string>

namespace mat {

SsmParams SsmParams::init(std::int64_t width, std::int64_t d_inner, std::int64_t state_size,
                          std::int64_t conv_width, Rng& rng) {
  if (width < 1 || d_inner < 1 || state_size < 1 || conv_width < 1) {
    throw ConfigError("SsmParams: width, d_inner, state size and conv width must be positive");
  }
  SsmParams p;
  p.width = width;
  p.d_inner = d_inner;
  p.state_size = state_size;
  p.conv_width = conv_width;

  const double w_in = 1.0 / std::sqrt(static_cast<double>(width));
  const double w_dd = 1.0 / std::sqrt(static_cast<double>(d_inner));
  p.in_proj = Tensor::randn({width, d_inner}, rng, w_in);
  p.gate_proj = Tensor::randn({width, d_inner}, rng, w_in);
  p.conv_kernel = Tensor::randn({d_inner, conv_width}, rng,
                                1.0 / std::sqrt(static_cast<double>(conv_width)));
  p.conv_bias = Tensor::zeros({d_inner});
  p.w_delta = Tensor::randn({d_inner, d_inner}, rng, w_dd);
  p.w_b = Tensor::randn({d_inner, state_size}, rng, w_dd);
  p.w_c = Tensor::randn({d_inner, state_size}, rng, w_dd);
  p.out_proj = Tensor::randn({d_inner, width}, rng, w_dd);
  p.d_feed = Tensor::full({d_inner}, 1.0);

  // S4D-real initialization: A = -(1..state_size) per inner channel.
  std::vector<double> alog(static_cast<std::size_t>(d_inner * state_size));
  for (std::int64_t c = 0; c < d_inner; ++c) {
    for (std::int64_t n = 0; n < state_size; ++n) {
      alog[static_cast<std::size_t>(c * state_size + n)] = std::log(static_cast<double>(n + 1));
    }
  }
  p.a_log = Tensor({d_inner, state_size}, std::move(alog));

  // Bias the step size so softplus(b_delta) lands in [0.001, 0.1].
  std::vector<double> bdelta(static_cast<std::size_t>(d_inner));
  const double lo = std::log(0.001), hi = std::log(0.1);
  for (auto& b : bdelta) {
    double dt = std::exp(lo + (hi - lo) * rng.uniform());
    b = std::log(std::expm1(dt));  // softplus inverse
  }
  p.b_delta = Tensor({d_inner}, std::move(bdelta));
  return p;
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& b_seq,
                      const Tensor& c_seq, const Tensor& a_diag, const Tensor& d_feed,
                      ScanPath path) {
  const auto len = u.rows();
  const auto d_inner = u.cols();
  const auto state = a_diag.cols();
  if (delta.shape() != u.shape()) {
    throw DimensionError("selective_scan: delta " + shape_str(delta.shape()) +
                         " does not match u " + shape_str(u.shape()));
  }
  if (b_seq.rows() != len || c_seq.rows() != len || b_seq.cols() != state ||
      c_seq.cols() != state) {
    throw DimensionError("selective_scan: B " + shape_str(b_seq.shape()) + " / C " +
                         shape_str(c_seq.shape()) + " inconsistent with length " +
                         std::to_string(len) + " and state size " + std::to_string(state));
  }
  if (a_diag.rows() != d_inner || d_feed.size() != d_inner) {
    throw DimensionError("selective_scan: A " + shape_str(a_diag.shape()) + " / d_feed size " +
                         std::to_string(d_feed.size()) + " inconsistent with d_inner " +
                         std::to_string(d_inner));
  }

  // Lanes are (channel, state) pairs, channel-major: lane = c*state + n.
  Tensor a_row = reshape(a_diag, {d_inner * state});
  Tensor delta_lanes = (state == 1) ? delta : repeat_cols(delta, state);
  Tensor u_lanes = (state == 1) ? u : repeat_cols(u, state);
  Tensor b_lanes = (d_inner == 1) ? b_seq : tile_cols(b_seq, d_inner);
  Tensor c_lanes = (d_inner == 1) ? c_seq : tile_cols(c_seq, d_inner);

  Tensor decay = exp(mul(delta_lanes, a_row));                      // exp(delta*A)
  Tensor drive = mul(mul(zoh_drive(delta_lanes, a_row), b_lanes), u_lanes);
  Tensor states = scan_states(decay, drive, path);

  Tensor y = mul(states, c_lanes);
  if (state > 1) y = sum_col_groups(y, state);
  return add(y, mul(u, d_feed));
}

Tensor mamba_block_forward(const Tensor& z, const SsmParams& params, ScanPath path) {
  if (z.shape().size() != 2 || z.cols() != params.width) {
    throw DimensionError("mamba_block_forward: input " + shape_str(z.shape()) +
                         " does not match block width " + std::to_string(params.width));
  }
  Tensor inner = matmul(z, params.in_proj);   // (len, d_inner)
  Tensor gate = matmul(z, params.gate_proj);  // (len, d_inner)

  Tensor conv = silu(causal_conv1d(inner, params.conv_kernel, params.conv_bias));
  Tensor delta = softplus(add(matmul(conv, params.w_delta), params.b_delta));
  Tensor b_seq = matmul(conv, params.w_b);
  Tensor c_seq = matmul(conv, params.w_c);
  Tensor a_diag = scale(exp(params.a_log), -1.0);

  Tensor y = selective_scan(conv, delta, b_seq, c_seq, a_diag, params.d_feed, path);
  return matmul(mul(y, silu(gate)), params.out_proj);
}

}  // namespace mat
