#pragma once

#include <cstdint>
#include <span>

#include "mat/errors.hpp"

namespace mat {

// One step of the discretized recurrence x_k = decay * x_{k-1} + drive in
// scan form. Composition is associative, which is what licenses the parallel
// prefix-scan execution path.
struct ScanElement {
  double decay = 1.0;  // identity element
  double drive = 0.0;
};

// Applies `first` then `then`:
//   (a1, b1) o (a2, b2) = (a1*a2, a2*b1 + b2).
inline ScanElement compose(ScanElement first, ScanElement then) {
  return {first.decay * then.decay, then.decay * first.drive + then.drive};
}

struct ZohCoeffs {
  double a_bar = 0.0;
  double b_bar = 0.0;
};

// Zero-order-hold discretization of one diagonal SSM lane:
//   a_bar = exp(delta*a),  b_bar = expm1(delta*a)/a * b,
// with the removable singularity at a == 0 evaluating to delta*b.
// delta must be positive.
ZohCoeffs discretize_zoh(double a, double b, double delta);

// Vector form over lanes: a and b have `lanes` entries, delta is per lane.
void discretize_zoh(std::span<const double> a, std::span<const double> b,
                    std::span<const double> delta, std::span<double> a_bar,
                    std::span<double> b_bar);

// Raw scan kernels over time-major lane arrays: decay/drive/states hold
// len*lanes doubles with lane index fastest. states[k] = decay[k]*states[k-1]
// + drive[k] per lane, zero initial state.
void scan_sequential(std::span<const double> decay, std::span<const double> drive,
                     std::int64_t len, std::int64_t lanes, std::span<double> states);

// Blelloch up-sweep/down-sweep over the ScanElement composition law; output
// matches scan_sequential to within roundoff.
void scan_parallel(std::span<const double> decay, std::span<const double> drive,
                   std::int64_t len, std::int64_t lanes, std::span<double> states);

}  // namespace mat
