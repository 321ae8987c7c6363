#include "mat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <utility>

#include "mat/scan.hpp"

namespace mat {

std::int64_t shape_size(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto e : shape_) {
    if (e <= 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
    }
  }
  if (shape_size(shape_) != static_cast<std::int64_t>(values_.size())) {
    throw DimensionError("value count " + std::to_string(values_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  auto n = shape_size(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

std::int64_t Tensor::rows() const {
  if (shape_.size() != 2) {
    throw DimensionError("rows(): tensor is not 2-D, shape " + shape_str(shape_));
  }
  return shape_[0];
}

std::int64_t Tensor::cols() const {
  if (shape_.size() != 2) {
    throw DimensionError("cols(): tensor is not 2-D, shape " + shape_str(shape_));
  }
  return shape_[1];
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("value(): tensor has " + std::to_string(size()) + " elements");
  }
  return values_[0];
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
  return values_[static_cast<std::size_t>(r * cols() + c)];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.values_ = values_;
  return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value, bool requires_grad) {
  Tensor t = value.detached();
  t.tape_ = this;
  t.node_ = record(t.shape_, requires_grad, BackwardFn{});
  t.requires_grad_ = requires_grad;
  return t;
}

Tensor Tape::emit(Tensor out, bool needs_grad, BackwardFn fn) {
  out.tape_ = this;
  out.node_ = record(out.shape_, needs_grad, needs_grad ? std::move(fn) : BackwardFn{});
  return out;
}

int Tape::record(const Shape& shape, bool needs_grad, BackwardFn fn) {
  nodes_.push_back(Node{shape, needs_grad, std::move(fn)});
  return static_cast<int>(nodes_.size()) - 1;
}

bool Tape::node_needs_grad(int node_id) const {
  return node_id >= 0 && nodes_[static_cast<std::size_t>(node_id)].needs_grad;
}

bool Tape::Accum::wanted(int node_id) const { return tape_.node_needs_grad(node_id); }

void Tape::Accum::add(int node_id, std::span<const double> contribution) {
  if (!wanted(node_id)) return;
  auto& slot = grads_[static_cast<std::size_t>(node_id)];
  if (slot.empty()) {
    slot.assign(contribution.begin(), contribution.end());
  } else {
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += contribution[i];
  }
}

GradientMap Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward: tape already consumed");
  if (loss.tape_ != this) throw ContractError("backward: loss does not live on this tape");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  consumed_ = true;

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.node_)] = {1.0};

  Accum acc(*this, grads);
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.empty() || !node.backward || !node.needs_grad) continue;
    node.backward(g, acc);
  }

  GradientMap out;
  out.by_node_ = std::move(grads);
  out.shapes_.reserve(nodes_.size());
  for (auto& n : nodes_) out.shapes_.push_back(n.shape);
  return out;
}

bool GradientMap::has(const Tensor& t) const {
  return t.on_tape() && t.node() >= 0 &&
         static_cast<std::size_t>(t.node()) < by_node_.size() &&
         !by_node_[static_cast<std::size_t>(t.node())].empty();
}

Tensor GradientMap::grad(const Tensor& t) const {
  if (!t.on_tape()) throw ContractError("grad: tensor is not bound to a tape");
  auto id = static_cast<std::size_t>(t.node());
  if (id >= by_node_.size()) throw ContractError("grad: node id out of range");
  if (by_node_[id].empty()) return Tensor::zeros(t.shape());
  return Tensor(shapes_[id], by_node_[id]);
}

// ---------------------------------------------------------------------------
// Op plumbing
// ---------------------------------------------------------------------------

namespace {

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->on_tape()) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      throw ContractError("operands are bound to different tapes");
    }
  }
  return tape;
}

bool input_needs_grad(const Tensor& t) {
  return t.on_tape() && t.tape()->node_needs_grad(t.node());
}

// Finalizes an op result. make_fn builds the backward closure and is invoked
// only when somebody downstream actually needs gradients.
template <class MakeFn>
Tensor finish(Shape shape, std::vector<double> values,
              std::initializer_list<const Tensor*> inputs, MakeFn&& make_fn) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = common_tape(inputs);
  if (tape == nullptr) return out;
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || input_needs_grad(*t);
  return tape->emit(std::move(out), needs, needs ? make_fn() : Tape::BackwardFn{});
}

// --- broadcasting -----------------------------------------------------------

enum class Bcast { kSame, kAScalar, kBScalar, kASuffix, kBSuffix, kARow, kBRow };

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() >= big.size()) return false;
  auto off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[i] != big[off + i]) return false;
  }
  return true;
}

bool is_trailing_one(const Shape& small, const Shape& big) {
  if (small.size() != big.size() || small.empty()) return false;
  if (small.back() != 1) return false;
  for (std::size_t i = 0; i + 1 < small.size(); ++i) {
    if (small[i] != big[i]) return false;
  }
  return true;
}

Bcast classify(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Bcast::kSame;
  if (shape_size(b) == 1) return Bcast::kBScalar;
  if (shape_size(a) == 1) return Bcast::kAScalar;
  if (is_suffix(b, a)) return Bcast::kBSuffix;
  if (is_suffix(a, b)) return Bcast::kASuffix;
  if (is_trailing_one(b, a)) return Bcast::kBRow;
  if (is_trailing_one(a, b)) return Bcast::kARow;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
}

// Flat-index map from the large operand's index to the small operand's.
struct SmallIndex {
  enum class Kind { kIdentity, kScalar, kSuffix, kRow } kind;
  std::int64_t modulus = 1;  // suffix: small size; row: big trailing extent
  std::int64_t operator()(std::int64_t i) const {
    switch (kind) {
      case Kind::kIdentity: return i;
      case Kind::kScalar: return 0;
      case Kind::kSuffix: return i % modulus;
      case Kind::kRow: return i / modulus;
    }
    return 0;
  }
};

struct BroadcastPlan {
  bool a_is_big = true;
  SmallIndex a_index, b_index;
  const Shape* out_shape = nullptr;
};

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  BroadcastPlan p;
  Bcast kind = classify(a.shape(), b.shape(), op);
  auto ident = SmallIndex{SmallIndex::Kind::kIdentity, 1};
  p.a_index = ident;
  p.b_index = ident;
  switch (kind) {
    case Bcast::kSame:
      p.out_shape = &a.shape();
      break;
    case Bcast::kBScalar:
      p.b_index = {SmallIndex::Kind::kScalar, 1};
      p.out_shape = &a.shape();
      break;
    case Bcast::kAScalar:
      p.a_index = {SmallIndex::Kind::kScalar, 1};
      p.out_shape = &b.shape();
      p.a_is_big = false;
      break;
    case Bcast::kBSuffix:
      p.b_index = {SmallIndex::Kind::kSuffix, b.size()};
      p.out_shape = &a.shape();
      break;
    case Bcast::kASuffix:
      p.a_index = {SmallIndex::Kind::kSuffix, a.size()};
      p.out_shape = &b.shape();
      p.a_is_big = false;
      break;
    case Bcast::kBRow:
      p.b_index = {SmallIndex::Kind::kRow, a.shape().back()};
      p.out_shape = &a.shape();
      break;
    case Bcast::kARow:
      p.a_index = {SmallIndex::Kind::kRow, b.shape().back()};
      p.out_shape = &b.shape();
      p.a_is_big = false;
      break;
  }
  return p;
}

// Generic broadcasting binary op. f computes the value, dfa/dfb the partial
// derivatives with respect to each operand, all element by element.
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA dfa, DB dfb) {
  BroadcastPlan p = plan_broadcast(a, b, op);
  const auto n = shape_size(*p.out_shape);
  std::vector<double> out(static_cast<std::size_t>(n));
  auto av = a.values();
  auto bv = b.values();
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = f(av[static_cast<std::size_t>(p.a_index(i))],
                                         bv[static_cast<std::size_t>(p.b_index(i))]);
  }
  return finish(*p.out_shape, std::move(out), {&a, &b}, [&] {
    std::vector<double> a_vals(av.begin(), av.end());
    std::vector<double> b_vals(bv.begin(), bv.end());
    int a_node = a.node(), b_node = b.node();
    std::int64_t a_size = a.size(), b_size = b.size();
    SmallIndex ai = p.a_index, bi = p.b_index;
    return [=](std::span<const double> g, Tape::Accum& acc) {
      const auto m = static_cast<std::int64_t>(g.size());
      if (acc.wanted(a_node)) {
        std::vector<double> ga(static_cast<std::size_t>(a_size), 0.0);
        for (std::int64_t i = 0; i < m; ++i) {
          auto iu = static_cast<std::size_t>(i);
          ga[static_cast<std::size_t>(ai(i))] +=
              dfa(a_vals[static_cast<std::size_t>(ai(i))], b_vals[static_cast<std::size_t>(bi(i))]) * g[iu];
        }
        acc.add(a_node, ga);
      }
      if (acc.wanted(b_node)) {
        std::vector<double> gb(static_cast<std::size_t>(b_size), 0.0);
        for (std::int64_t i = 0; i < m; ++i) {
          auto iu = static_cast<std::size_t>(i);
          gb[static_cast<std::size_t>(bi(i))] +=
              dfb(a_vals[static_cast<std::size_t>(ai(i))], b_vals[static_cast<std::size_t>(bi(i))]) * g[iu];
        }
        acc.add(b_node, gb);
      }
    };
  });
}

// Generic elementwise unary op.
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  const auto n = a.size();
  std::vector<double> out(static_cast<std::size_t>(n));
  auto av = a.values();
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = f(av[static_cast<std::size_t>(i)]);
  }
  return finish(a.shape(), std::move(out), {&a}, [&] {
    std::vector<double> a_vals(av.begin(), av.end());
    int a_node = a.node();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> ga(a_vals.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = df(a_vals[i]) * g[i];
      acc.add(a_node, ga);
    };
  });
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_stable(double x) {
  // log(1+e^x) = max(x,0) + log1p(e^{-|x|})
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor zoh_drive(const Tensor& delta, const Tensor& a) {
  auto value = [](double d, double av) {
    return av == 0.0 ? d : std::expm1(d * av) / av;
  };
  auto d_delta = [](double d, double av) { return std::exp(d * av); };
  auto d_a = [](double d, double av) {
    double z = d * av;
    if (std::abs(z) < 1e-5) {
      return d * d * (0.5 + z / 3.0 + z * z / 8.0);
    }
    return d * d * ((z * std::exp(z) - std::expm1(z)) / (z * z));
  };
  return binary(delta, a, "zoh_drive", value, d_delta, d_a);
}

Tensor scale(const Tensor& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor expm1(const Tensor& a) {
  return unary(a, [](double x) { return std::expm1(x); }, [](double x) { return std::exp(x); });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double x) { return 0.5 / std::sqrt(x); });
}

Tensor softplus(const Tensor& a) {
  return unary(a, [](double x) { return softplus_stable(x); },
               [](double x) { return sigmoid(x); });
}

Tensor silu(const Tensor& a) {
  return unary(a, [](double x) { return x * sigmoid(x); },
               [](double x) {
                 double s = sigmoid(x);
                 return s * (1.0 + x * (1.0 - s));
               });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary(a, [floor](double x) { return x < floor ? floor : x; },
               [floor](double x) { return x < floor ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const auto r = a.rows(), k = a.cols(), c = b.cols();
  std::vector<double> out(static_cast<std::size_t>(r * c), 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double aik = av[static_cast<std::size_t>(i * k + kk)];
      if (aik == 0.0) continue;
      const std::size_t brow = static_cast<std::size_t>(kk * c);
      const std::size_t orow = static_cast<std::size_t>(i * c);
      for (std::int64_t j = 0; j < c; ++j) {
        out[orow + static_cast<std::size_t>(j)] += aik * bv[brow + static_cast<std::size_t>(j)];
      }
    }
  }
  return finish({r, c}, std::move(out), {&a, &b}, [&] {
    std::vector<double> a_vals(av.begin(), av.end());
    std::vector<double> b_vals(bv.begin(), bv.end());
    int a_node = a.node(), b_node = b.node();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      if (acc.wanted(a_node)) {
        // dA = G B^T
        std::vector<double> ga(static_cast<std::size_t>(r * k), 0.0);
        for (std::int64_t i = 0; i < r; ++i) {
          for (std::int64_t kk = 0; kk < k; ++kk) {
            double s = 0.0;
            for (std::int64_t j = 0; j < c; ++j) {
              s += g[static_cast<std::size_t>(i * c + j)] * b_vals[static_cast<std::size_t>(kk * c + j)];
            }
            ga[static_cast<std::size_t>(i * k + kk)] = s;
          }
        }
        acc.add(a_node, ga);
      }
      if (acc.wanted(b_node)) {
        // dB = A^T G
        std::vector<double> gb(static_cast<std::size_t>(k * c), 0.0);
        for (std::int64_t i = 0; i < r; ++i) {
          for (std::int64_t kk = 0; kk < k; ++kk) {
            const double aik = a_vals[static_cast<std::size_t>(i * k + kk)];
            if (aik == 0.0) continue;
            for (std::int64_t j = 0; j < c; ++j) {
              gb[static_cast<std::size_t>(kk * c + j)] += aik * g[static_cast<std::size_t>(i * c + j)];
            }
          }
        }
        acc.add(b_node, gb);
      }
    };
  });
}

Tensor transpose(const Tensor& a) {
  const auto r = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<std::size_t>(r * c));
  auto av = a.values();
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      out[static_cast<std::size_t>(j * r + i)] = av[static_cast<std::size_t>(i * c + j)];
    }
  }
  return finish({c, r}, std::move(out), {&a}, [&] {
    int a_node = a.node();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> ga(static_cast<std::size_t>(r * c));
      for (std::int64_t j = 0; j < c; ++j) {
        for (std::int64_t i = 0; i < r; ++i) {
          ga[static_cast<std::size_t>(i * c + j)] = g[static_cast<std::size_t>(j * r + i)];
        }
      }
      acc.add(a_node, ga);
    };
  });
}

Tensor softmax(const Tensor& a, int axis) {
  const auto& sh = a.shape();
  if (sh.size() != 1 && sh.size() != 2) {
    throw DimensionError("softmax: expected 1-D or 2-D tensor, shape " + shape_str(sh));
  }
  if (axis < 0 || axis >= static_cast<int>(sh.size())) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(sh));
  }
  auto av = a.values();
  for (double x : av) {
    if (!std::isfinite(x)) throw NumericError("softmax: non-finite input");
  }

  // View the tensor as (slices, n, stride): the softmax runs over n entries
  // spaced `stride` apart.
  std::int64_t n, stride, slices;
  if (sh.size() == 1) {
    n = sh[0], stride = 1, slices = 1;
  } else if (axis == 1) {
    n = sh[1], stride = 1, slices = sh[0];
  } else {
    n = sh[0], stride = sh[1], slices = sh[1];
  }

  const bool row_major_slices = (sh.size() == 2 && axis == 1);
  std::vector<double> out(av.begin(), av.end());
  for (std::int64_t s = 0; s < slices; ++s) {
    const std::int64_t base = row_major_slices ? s * n : s;
    double m = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < n; ++i) m = std::max(m, av[static_cast<std::size_t>(base + i * stride)]);
    double sum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      auto idx = static_cast<std::size_t>(base + i * stride);
      out[idx] = std::exp(av[idx] - m);
      sum += out[idx];
    }
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(base + i * stride)] /= sum;
  }

  // dx = y * (g - sum(g*y)) per slice; the output is what backward needs.
  auto make_fn = [a_node = a.node(), y = out, n, stride, slices, row_major_slices] {
    return Tape::BackwardFn(
        [a_node, y = std::move(y), n, stride, slices, row_major_slices](
            std::span<const double> g, Tape::Accum& acc) {
          std::vector<double> ga(y.size());
          for (std::int64_t s = 0; s < slices; ++s) {
            const std::int64_t base = row_major_slices ? s * n : s;
            double dot = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
              auto idx = static_cast<std::size_t>(base + i * stride);
              dot += g[idx] * y[idx];
            }
            for (std::int64_t i = 0; i < n; ++i) {
              auto idx = static_cast<std::size_t>(base + i * stride);
              ga[idx] = y[idx] * (g[idx] - dot);
            }
          }
          acc.add(a_node, ga);
        });
  };
  return finish(sh, std::move(out), {&a}, make_fn);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return finish({1}, {s}, {&a}, [&] {
    int a_node = a.node();
    std::int64_t n = a.size();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> ga(static_cast<std::size_t>(n), g[0]);
      acc.add(a_node, ga);
    };
  });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_axis(const Tensor& a, int axis) {
  const auto r = a.rows(), c = a.cols();
  if (axis != 0 && axis != 1) throw DimensionError("sum_axis: axis must be 0 or 1");
  auto av = a.values();
  Shape out_shape = (axis == 1) ? Shape{r, 1} : Shape{1, c};
  std::vector<double> out(static_cast<std::size_t>(shape_size(out_shape)), 0.0);
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      out[static_cast<std::size_t>(axis == 1 ? i : j)] += av[static_cast<std::size_t>(i * c + j)];
    }
  }
  return finish(out_shape, std::move(out), {&a}, [&] {
    int a_node = a.node();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> ga(static_cast<std::size_t>(r * c));
      for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
          ga[static_cast<std::size_t>(i * c + j)] = g[static_cast<std::size_t>(axis == 1 ? i : j)];
        }
      }
      acc.add(a_node, ga);
    };
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: size mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto av = a.values();
  return finish(std::move(shape), std::vector<double>(av.begin(), av.end()), {&a}, [&] {
    int a_node = a.node();
    return [=](std::span<const double> g, Tape::Accum& acc) { acc.add(a_node, g); };
  });
}

Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1) {
  const auto r = a.rows(), c = a.cols();
  if (r0 < 0 || r1 <= r0 || r1 > r) {
    throw DimensionError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for shape " + shape_str(a.shape()));
  }
  auto av = a.values();
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(r0 * c),
                          av.begin() + static_cast<std::ptrdiff_t>(r1 * c));
  return finish({r1 - r0, c}, std::move(out), {&a}, [&] {
    int a_node = a.node();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> ga(static_cast<std::size_t>(r * c), 0.0);
      std::copy(g.begin(), g.end(), ga.begin() + static_cast<std::ptrdiff_t>(r0 * c));
      acc.add(a_node, ga);
    };
  });
}

Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
  const auto r = a.rows(), c = a.cols();
  if (c0 < 0 || c1 <= c0 || c1 > c) {
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for shape " + shape_str(a.shape()));
  }
  auto av = a.values();
  const auto w = c1 - c0;
  std::vector<double> out(static_cast<std::size_t>(r * w));
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      out[static_cast<std::size_t>(i * w + j)] = av[static_cast<std::size_t>(i * c + c0 + j)];
    }
  }
  return finish({r, w}, std::move(out), {&a}, [&] {
    int a_node = a.node();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> ga(static_cast<std::size_t>(r * c), 0.0);
      for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
          ga[static_cast<std::size_t>(i * c + c0 + j)] = g[static_cast<std::size_t>(i * w + j)];
        }
      }
      acc.add(a_node, ga);
    };
  });
}

namespace {

Tape* common_tape_vec(const std::vector<Tensor>& parts) {
  Tape* tape = nullptr;
  for (const auto& t : parts) {
    if (!t.on_tape()) continue;
    if (tape == nullptr) {
      tape = t.tape();
    } else if (tape != t.tape()) {
      throw ContractError("operands are bound to different tapes");
    }
  }
  return tape;
}

}  // namespace

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const auto c = parts[0].cols();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total * c));
  for (const auto& p : parts) {
    auto pv = p.values();
    out.insert(out.end(), pv.begin(), pv.end());
  }
  Tensor result({total, c}, std::move(out));
  Tape* tape = common_tape_vec(parts);
  if (tape == nullptr) return result;
  bool needs = false;
  std::vector<int> nodes;
  std::vector<std::int64_t> sizes;
  for (const auto& p : parts) {
    needs = needs || input_needs_grad(p);
    nodes.push_back(p.node());
    sizes.push_back(p.size());
  }
  if (!needs) return tape->emit(std::move(result), false, {});
  return tape->emit(std::move(result), true,
                    [nodes, sizes](std::span<const double> g, Tape::Accum& acc) {
                      std::size_t off = 0;
                      for (std::size_t i = 0; i < nodes.size(); ++i) {
                        acc.add(nodes[i], g.subspan(off, static_cast<std::size_t>(sizes[i])));
                        off += static_cast<std::size_t>(sizes[i]);
                      }
                    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const auto r = parts[0].rows();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(r * total));
  std::int64_t col_off = 0;
  for (const auto& p : parts) {
    auto pv = p.values();
    const auto pc = p.cols();
    for (std::int64_t i = 0; i < r; ++i) {
      for (std::int64_t j = 0; j < pc; ++j) {
        out[static_cast<std::size_t>(i * total + col_off + j)] = pv[static_cast<std::size_t>(i * pc + j)];
      }
    }
    col_off += pc;
  }
  Tensor result({r, total}, std::move(out));
  Tape* tape = common_tape_vec(parts);
  if (tape == nullptr) return result;
  bool needs = false;
  std::vector<int> nodes;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    needs = needs || input_needs_grad(p);
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  if (!needs) return tape->emit(std::move(result), false, {});
  return tape->emit(std::move(result), true,
                    [nodes, widths, r, total](std::span<const double> g, Tape::Accum& acc) {
                      std::int64_t off = 0;
                      for (std::size_t p = 0; p < nodes.size(); ++p) {
                        const auto w = widths[p];
                        std::vector<double> gp(static_cast<std::size_t>(r * w));
                        for (std::int64_t i = 0; i < r; ++i) {
                          for (std::int64_t j = 0; j < w; ++j) {
                            gp[static_cast<std::size_t>(i * w + j)] =
                                g[static_cast<std::size_t>(i * total + off + j)];
                          }
                        }
                        acc.add(nodes[p], gp);
                        off += w;
                      }
                    });
}

Tensor repeat_cols(const Tensor& a, std::int64_t r) {
  const auto p = a.rows(), q = a.cols();
  if (r < 1) throw DimensionError("repeat_cols: repeat count must be positive");
  std::vector<double> out(static_cast<std::size_t>(p * q * r));
  auto av = a.values();
  for (std::int64_t i = 0; i < p; ++i) {
    for (std::int64_t j = 0; j < q; ++j) {
      const double v = av[static_cast<std::size_t>(i * q + j)];
      for (std::int64_t t = 0; t < r; ++t) {
        out[static_cast<std::size_t>(i * q * r + j * r + t)] = v;
      }
    }
  }
  return finish({p, q * r}, std::move(out), {&a}, [&] {
    int a_node = a.node();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> ga(static_cast<std::size_t>(p * q), 0.0);
      for (std::int64_t i = 0; i < p; ++i) {
        for (std::int64_t j = 0; j < q; ++j) {
          double s = 0.0;
          for (std::int64_t t = 0; t < r; ++t) {
            s += g[static_cast<std::size_t>(i * q * r + j * r + t)];
          }
          ga[static_cast<std::size_t>(i * q + j)] = s;
        }
      }
      acc.add(a_node, ga);
    };
  });
}

Tensor tile_cols(const Tensor& a, std::int64_t r) {
  const auto p = a.rows(), q = a.cols();
  if (r < 1) throw DimensionError("tile_cols: repeat count must be positive");
  std::vector<double> out(static_cast<std::size_t>(p * q * r));
  auto av = a.values();
  for (std::int64_t i = 0; i < p; ++i) {
    for (std::int64_t t = 0; t < r; ++t) {
      for (std::int64_t j = 0; j < q; ++j) {
        out[static_cast<std::size_t>(i * q * r + t * q + j)] = av[static_cast<std::size_t>(i * q + j)];
      }
    }
  }
  return finish({p, q * r}, std::move(out), {&a}, [&] {
    int a_node = a.node();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> ga(static_cast<std::size_t>(p * q), 0.0);
      for (std::int64_t i = 0; i < p; ++i) {
        for (std::int64_t t = 0; t < r; ++t) {
          for (std::int64_t j = 0; j < q; ++j) {
            ga[static_cast<std::size_t>(i * q + j)] += g[static_cast<std::size_t>(i * q * r + t * q + j)];
          }
        }
      }
      acc.add(a_node, ga);
    };
  });
}

Tensor sum_col_groups(const Tensor& a, std::int64_t gsize) {
  const auto p = a.rows(), q = a.cols();
  if (gsize < 1 || q % gsize != 0) {
    throw DimensionError("sum_col_groups: group size " + std::to_string(gsize) +
                         " does not divide column count " + std::to_string(q));
  }
  const auto w = q / gsize;
  std::vector<double> out(static_cast<std::size_t>(p * w), 0.0);
  auto av = a.values();
  for (std::int64_t i = 0; i < p; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      double s = 0.0;
      for (std::int64_t t = 0; t < gsize; ++t) {
        s += av[static_cast<std::size_t>(i * q + j * gsize + t)];
      }
      out[static_cast<std::size_t>(i * w + j)] = s;
    }
  }
  return finish({p, w}, std::move(out), {&a}, [&] {
    int a_node = a.node();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> ga(static_cast<std::size_t>(p * q));
      for (std::int64_t i = 0; i < p; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
          const double v = g[static_cast<std::size_t>(i * w + j)];
          for (std::int64_t t = 0; t < gsize; ++t) {
            ga[static_cast<std::size_t>(i * q + j * gsize + t)] = v;
          }
        }
      }
      acc.add(a_node, ga);
    };
  });
}

// ---------------------------------------------------------------------------
// Convolution, dropout, scan
// ---------------------------------------------------------------------------

Tensor causal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  const auto l = x.rows(), d = x.cols();
  if (kernel.shape().size() != 2 || kernel.rows() != d) {
    throw DimensionError("causal_conv1d: kernel shape " + shape_str(kernel.shape()) +
                         " does not match input " + shape_str(x.shape()));
  }
  if (bias.size() != d) {
    throw DimensionError("causal_conv1d: bias size " + std::to_string(bias.size()) +
                         " does not match channel count " + std::to_string(d));
  }
  const auto w = kernel.cols();
  auto xv = x.values();
  auto kv = kernel.values();
  auto bv = bias.values();
  std::vector<double> out(static_cast<std::size_t>(l * d));
  for (std::int64_t t = 0; t < l; ++t) {
    for (std::int64_t c = 0; c < d; ++c) {
      double s = bv[static_cast<std::size_t>(c)];
      for (std::int64_t j = 0; j < w; ++j) {
        const std::int64_t src = t - (w - 1) + j;
        if (src < 0) continue;
        s += kv[static_cast<std::size_t>(c * w + j)] * xv[static_cast<std::size_t>(src * d + c)];
      }
      out[static_cast<std::size_t>(t * d + c)] = s;
    }
  }
  return finish({l, d}, std::move(out), {&x, &kernel, &bias}, [&] {
    std::vector<double> x_vals(xv.begin(), xv.end());
    std::vector<double> k_vals(kv.begin(), kv.end());
    int x_node = x.node(), k_node = kernel.node(), b_node = bias.node();
    return [=](std::span<const double> g, Tape::Accum& acc) {
      if (acc.wanted(x_node)) {
        std::vector<double> gx(static_cast<std::size_t>(l * d), 0.0);
        for (std::int64_t t = 0; t < l; ++t) {
          for (std::int64_t c = 0; c < d; ++c) {
            const double gv = g[static_cast<std::size_t>(t * d + c)];
            for (std::int64_t j = 0; j < w; ++j) {
              const std::int64_t src = t - (w - 1) + j;
              if (src < 0) continue;
              gx[static_cast<std::size_t>(src * d + c)] +=
                  k_vals[static_cast<std::size_t>(c * w + j)] * gv;
            }
          }
        }
        acc.add(x_node, gx);
      }
      if (acc.wanted(k_node)) {
        std::vector<double> gk(static_cast<std::size_t>(d * w), 0.0);
        for (std::int64_t t = 0; t < l; ++t) {
          for (std::int64_t c = 0; c < d; ++c) {
            const double gv = g[static_cast<std::size_t>(t * d + c)];
            for (std::int64_t j = 0; j < w; ++j) {
              const std::int64_t src = t - (w - 1) + j;
              if (src < 0) continue;
              gk[static_cast<std::size_t>(c * w + j)] +=
                  gv * x_vals[static_cast<std::size_t>(src * d + c)];
            }
          }
        }
        acc.add(k_node, gk);
      }
      if (acc.wanted(b_node)) {
        std::vector<double> gb(static_cast<std::size_t>(d), 0.0);
        for (std::int64_t t = 0; t < l; ++t) {
          for (std::int64_t c = 0; c < d; ++c) {
            gb[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(t * d + c)];
          }
        }
        acc.add(b_node, gb);
      }
    };
  });
}

Tensor dropout(const Tensor& x, double p, DropoutMode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: probability must lie in [0,1), got " + std::to_string(p));
  }
  if (mode == DropoutMode::kEval || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(static_cast<std::size_t>(x.size()));
  for (auto& m : mask) m = (rng.uniform() < p) ? 0.0 : keep_scale;
  auto xv = x.values();
  std::vector<double> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = xv[i] * mask[i];
  return finish(x.shape(), std::move(out), {&x}, [&] {
    int x_node = x.node();
    return [mask = std::move(mask), x_node](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> gx(mask.size());
      for (std::size_t i = 0; i < mask.size(); ++i) gx[i] = g[i] * mask[i];
      acc.add(x_node, gx);
    };
  });
}

Tensor scan_states(const Tensor& decay, const Tensor& drive, ScanPath path) {
  if (decay.shape() != drive.shape() || decay.shape().size() != 2) {
    throw DimensionError("scan_states: decay " + shape_str(decay.shape()) + " and drive " +
                         shape_str(drive.shape()) + " must be equal 2-D shapes");
  }
  const auto l = decay.rows(), lanes = decay.cols();
  std::vector<double> states(static_cast<std::size_t>(l * lanes));
  if (path == ScanPath::kSequential) {
    scan_sequential(decay.values(), drive.values(), l, lanes, states);
  } else {
    scan_parallel(decay.values(), drive.values(), l, lanes, states);
  }

  // Adjoint of the linear recurrence is the reversed recurrence
  //   s_k = g_k + a_{k+1} * s_{k+1},
  // after which ddrive_k = s_k and ddecay_k = s_k * x_{k-1} (zero at k=0).
  auto make_fn = [a_node = decay.node(), b_node = drive.node(),
                  a_vals = std::vector<double>(decay.values().begin(), decay.values().end()),
                  x = states, l, lanes] {
    return Tape::BackwardFn([a_node, b_node, a_vals = std::move(a_vals), x = std::move(x), l,
                             lanes](std::span<const double> g, Tape::Accum& acc) {
      std::vector<double> s(x.size());
      const std::size_t last = static_cast<std::size_t>((l - 1) * lanes);
      for (std::int64_t c = 0; c < lanes; ++c) {
        s[last + static_cast<std::size_t>(c)] = g[last + static_cast<std::size_t>(c)];
      }
      for (std::int64_t k = l - 2; k >= 0; --k) {
        const std::size_t row = static_cast<std::size_t>(k * lanes);
        const std::size_t next = row + static_cast<std::size_t>(lanes);
        for (std::int64_t c = 0; c < lanes; ++c) {
          const auto i = row + static_cast<std::size_t>(c);
          s[i] = g[i] + a_vals[next + static_cast<std::size_t>(c)] * s[next + static_cast<std::size_t>(c)];
        }
      }
      acc.add(b_node, s);
      if (acc.wanted(a_node)) {
        std::vector<double> ga(x.size(), 0.0);
        for (std::int64_t k = 1; k < l; ++k) {
          const std::size_t row = static_cast<std::size_t>(k * lanes);
          const std::size_t prev = row - static_cast<std::size_t>(lanes);
          for (std::int64_t c = 0; c < lanes; ++c) {
            const auto i = row + static_cast<std::size_t>(c);
            ga[i] = s[i] * x[prev + static_cast<std::size_t>(c)];
          }
        }
        acc.add(a_node, ga);
      }
    });
  };
  return finish({l, lanes}, std::move(states), {&decay, &drive}, make_fn);
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse: shapes differ " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  Tensor diff = sub(pred, target);
  return mean_all(mul(diff, diff));
}

}  // namespace mat
