#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mat/errors.hpp"
#include "mat/rng.hpp"

namespace mat {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Dense double-precision tensor. Plain tensors are constants; tensors bound
// to a Tape (via Tape::leaf or as op results) participate in reverse-mode
// differentiation. Tensors are value types: operations snapshot whatever
// their backward pass needs, so mutating a tensor after use is harmless.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(values_.size()); }
  bool empty() const { return values_.empty(); }
  std::int64_t rows() const;  // 2-D only
  std::int64_t cols() const;  // 2-D only

  std::span<const double> values() const { return values_; }
  std::span<double> values_mut() { return values_; }
  double value() const;  // single-element tensors
  double at(std::int64_t r, std::int64_t c) const;

  bool on_tape() const { return tape_ != nullptr; }
  bool requires_grad() const { return requires_grad_; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Value copy with no tape binding.
  Tensor detached() const;

 private:
  friend class Tape;
  Shape shape_;
  std::vector<double> values_;
  Tape* tape_ = nullptr;
  int node_ = -1;
  bool requires_grad_ = false;
};

// Result of one backward pass; gradients are addressed by the tensors whose
// nodes produced them.
class GradientMap {
 public:
  bool has(const Tensor& t) const;
  // Gradient with the tensor's shape; zeros if the loss never reached it.
  Tensor grad(const Tensor& t) const;

 private:
  friend class Tape;
  std::vector<std::vector<double>> by_node_;
  std::vector<Shape> shapes_;
};

// Ordered record of one forward pass. Node creation order is topological, so
// the backward pass visits nodes exactly once in reverse creation order. A
// tape is consumed by exactly one backward() call.
class Tape {
 public:
  // Routes gradient contributions to input nodes during backward.
  class Accum {
   public:
    // True if the node exists and a gradient is worth computing for it.
    bool wanted(int node_id) const;
    void add(int node_id, std::span<const double> contribution);

   private:
    friend class Tape;
    explicit Accum(Tape& tape, std::vector<std::vector<double>>& grads)
        : tape_(tape), grads_(grads) {}
    Tape& tape_;
    std::vector<std::vector<double>>& grads_;
  };

  using BackwardFn = std::function<void(std::span<const double>, Accum&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a value as a differentiation leaf on this tape.
  Tensor leaf(const Tensor& value, bool requires_grad);

  // Reverse pass from a scalar loss; consumes the tape.
  GradientMap backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

  // Used by the op implementations.
  int record(const Shape& shape, bool needs_grad, BackwardFn fn);
  bool node_needs_grad(int node_id) const;
  // Binds an op result to this tape as a fresh node.
  Tensor emit(Tensor out, bool needs_grad, BackwardFn fn);

 private:
  struct Node {
    Shape shape;
    bool needs_grad = false;
    BackwardFn backward;  // empty for leaves
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

enum class ScanPath { kSequential, kParallel };
enum class DropoutMode { kTrain, kEval };

// ---------------------------------------------------------------------------
// Differentiable operations. Operands may be tape-bound or plain constants;
// binding two operands to different tapes is a contract error. Broadcasting
// is restricted to three forms: single-element scalars, a trailing-suffix
// operand (e.g. a (n) bias against an (m, n) matrix), and a trailing-axis
// operand of extent one (e.g. per-row statistics (m, 1) against (m, n)).
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor exp(const Tensor& a);
Tensor expm1(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// 2-D reduction keeping the reduced axis at extent one.
Tensor sum_axis(const Tensor& a, int axis);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1);
Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Lane plumbing for the selective scan: (p, q) -> (p, q*r) with each column
// repeated r times adjacently / with the whole block tiled r times; the
// reduction (p, q) -> (p, q/g) sums adjacent groups of g columns.
Tensor repeat_cols(const Tensor& a, std::int64_t r);
Tensor tile_cols(const Tensor& a, std::int64_t r);
Tensor sum_col_groups(const Tensor& a, std::int64_t g);

// Depthwise causal 1-D convolution over the rows of x (time major): kernel
// column w-1 multiplies the current step, earlier columns reach back in time,
// missing history is zero. x (l, d), kernel (d, w), bias (d).
Tensor causal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

// Inverted dropout: train mode zeroes each element with probability p and
// scales survivors by 1/(1-p); eval mode is the exact identity.
Tensor dropout(const Tensor& x, double p, DropoutMode mode, Rng& rng);

// First-order linear recurrence x_k = decay_k * x_{k-1} + drive_k with
// x_{-1} = 0, applied independently per column lane; rows are time steps.
// Returns all states. The parallel path is a Blelloch prefix scan and agrees
// with the sequential path to it within roundoff.
Tensor scan_states(const Tensor& decay, const Tensor& drive, ScanPath path);

// ZOH drive coefficient expm1(delta*a)/a with the removable a->0 limit delta.
Tensor zoh_drive(const Tensor& delta, const Tensor& a);

// Mean squared error as a differentiable scalar.
Tensor mse(const Tensor& pred, const Tensor& target);

}  // namespace mat
