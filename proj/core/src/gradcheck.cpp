#include "mat/gradcheck.hpp"

#include <cmath>
#include <limits>

namespace mat {

namespace {

double eval_scalar(const ScalarFn& f, const Tensor& x) {
  Tape tape;
  Tensor xb = tape.leaf(x, /*requires_grad=*/false);
  return f(tape, xb).value();
}

double eval_scalar_multi(const MultiScalarFn& f, const std::vector<Tensor>& leaves) {
  Tape tape;
  std::vector<Tensor> bound;
  bound.reserve(leaves.size());
  for (const auto& l : leaves) bound.push_back(tape.leaf(l, /*requires_grad=*/false));
  return f(tape, bound).value();
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  Tape tape;
  Tensor xb = tape.leaf(x, /*requires_grad=*/true);
  Tensor loss = f(tape, xb);
  GradientMap grads = tape.backward(loss);
  Tensor analytic = grads.grad(xb);

  double worst = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    Tensor plus = x.detached();
    Tensor minus = x.detached();
    plus.values_mut()[static_cast<std::size_t>(i)] += h;
    minus.values_mut()[static_cast<std::size_t>(i)] -= h;
    const double numeric = (eval_scalar(f, plus) - eval_scalar(f, minus)) / (2.0 * h);
    const double ana = analytic.values()[static_cast<std::size_t>(i)];
    double rel = std::abs(ana - numeric) / std::max(1.0, std::abs(ana));
    if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
    worst = std::max(worst, rel);
  }
  return worst;
}

GradCheckReport grad_check_multi(const MultiScalarFn& f, const std::vector<Tensor>& leaves,
                                 double h) {
  Tape tape;
  std::vector<Tensor> bound;
  bound.reserve(leaves.size());
  for (const auto& l : leaves) bound.push_back(tape.leaf(l, /*requires_grad=*/true));
  Tensor loss = f(tape, bound);
  GradientMap grads = tape.backward(loss);

  GradCheckReport report;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor analytic = grads.grad(bound[li]);
    for (std::int64_t i = 0; i < leaves[li].size(); ++i) {
      std::vector<Tensor> plus = leaves;
      std::vector<Tensor> minus = leaves;
      plus[li].values_mut()[static_cast<std::size_t>(i)] += h;
      minus[li].values_mut()[static_cast<std::size_t>(i)] -= h;
      const double numeric = (eval_scalar_multi(f, plus) - eval_scalar_multi(f, minus)) / (2.0 * h);
      const double ana = analytic.values()[static_cast<std::size_t>(i)];
      double rel = std::abs(ana - numeric) / std::max(1.0, std::abs(ana));
      if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_leaf = li;
        report.worst_coord = i;
      }
    }
  }
  return report;
}

}  // namespace mat
