#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mat/tensor.hpp"

namespace mat {

// Scalar-valued function of one tensor, rebuilt on a fresh tape per call.
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

// Compares the analytic gradient of f at x against central finite
// differences. Returns max_i |g_ana,i - g_num,i| / max(1, |g_ana,i|).
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// Multi-leaf variant: f receives all leaves (bound on the tape in order) and
// the analytic gradients of every leaf are checked coordinate by coordinate.
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::int64_t worst_coord = 0;
};

using MultiScalarFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

GradCheckReport grad_check_multi(const MultiScalarFn& f, const std::vector<Tensor>& leaves,
                                 double h = 1e-5);

}  // namespace mat
