#pragma once

#include <string>
#include <vector>

#include "mat/gradcheck.hpp"

namespace mat {

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool pass = false;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double worst = 0.0;
  bool pass = true;
};

// Finite-difference checks for every differentiable operation plus the
// composed forecaster at toy dimensions (M=3, L=8, T=4, n1=8, n2=4, D=4,
// N=1, H=2). All checks must come in under the tolerance.
GradSuiteResult run_gradient_suite(double tolerance = 1e-4);

}  // namespace mat
