#include "mat/scan.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace mat {

ZohCoeffs discretize_zoh(double a, double b, double delta) {
  if (!(delta > 0.0)) {
    throw ContractError("discretize_zoh: delta must be positive, got " + std::to_string(delta));
  }
  double z = delta * a;
  ZohCoeffs out;
  out.a_bar = std::exp(z);
  // expm1 keeps the drive coefficient accurate for small |delta*a|; only the
  // exact zero needs the limit value.
  out.b_bar = (a == 0.0) ? delta * b : (std::expm1(z) / a) * b;
  return out;
}

void discretize_zoh(std::span<const double> a, std::span<const double> b,
                    std::span<const double> delta, std::span<double> a_bar,
                    std::span<double> b_bar) {
  if (a.size() != b.size() || a.size() != delta.size() || a.size() != a_bar.size() ||
      a.size() != b_bar.size()) {
    throw DimensionError("discretize_zoh: lane count mismatch");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    ZohCoeffs c = discretize_zoh(a[i], b[i], delta[i]);
    a_bar[i] = c.a_bar;
    b_bar[i] = c.b_bar;
  }
}

void scan_sequential(std::span<const double> decay, std::span<const double> drive,
                     std::int64_t len, std::int64_t lanes, std::span<double> states) {
  const auto n = static_cast<std::size_t>(len * lanes);
  if (decay.size() != n || drive.size() != n || states.size() != n) {
    throw DimensionError("scan_sequential: buffer sizes do not match len*lanes");
  }
  for (std::int64_t c = 0; c < lanes; ++c) states[static_cast<std::size_t>(c)] = drive[static_cast<std::size_t>(c)];
  for (std::int64_t k = 1; k < len; ++k) {
    const std::size_t row = static_cast<std::size_t>(k * lanes);
    const std::size_t prev = row - static_cast<std::size_t>(lanes);
    for (std::int64_t c = 0; c < lanes; ++c) {
      const auto i = row + static_cast<std::size_t>(c);
      states[i] = decay[i] * states[prev + static_cast<std::size_t>(c)] + drive[i];
    }
  }
}

void scan_parallel(std::span<const double> decay, std::span<const double> drive,
                   std::int64_t len, std::int64_t lanes, std::span<double> states) {
  const auto n = static_cast<std::size_t>(len * lanes);
  if (decay.size() != n || drive.size() != n || states.size() != n) {
    throw DimensionError("scan_parallel: buffer sizes do not match len*lanes");
  }
  if (len == 0) return;

  // Pad to a power of two with identity elements.
  std::int64_t padded = 1;
  while (padded < len) padded <<= 1;
  const std::size_t stride = static_cast<std::size_t>(lanes);
  std::vector<double> a(static_cast<std::size_t>(padded) * stride, 1.0);
  std::vector<double> b(static_cast<std::size_t>(padded) * stride, 0.0);
  std::copy(decay.begin(), decay.end(), a.begin());
  std::copy(drive.begin(), drive.end(), b.begin());

  // Up-sweep: e[i] = e[i-s] o e[i].
  for (std::int64_t s = 1; s < padded; s <<= 1) {
    for (std::int64_t i = 2 * s - 1; i < padded; i += 2 * s) {
      const std::size_t hi = static_cast<std::size_t>(i) * stride;
      const std::size_t lo = static_cast<std::size_t>(i - s) * stride;
      for (std::size_t c = 0; c < stride; ++c) {
        const double a_lo = a[lo + c], b_lo = b[lo + c];
        const double a_hi = a[hi + c], b_hi = b[hi + c];
        a[hi + c] = a_lo * a_hi;
        b[hi + c] = a_hi * b_lo + b_hi;
      }
    }
  }

  // Down-sweep produces the exclusive prefix composition in place.
  for (std::size_t c = 0; c < stride; ++c) {
    a[static_cast<std::size_t>(padded - 1) * stride + c] = 1.0;
    b[static_cast<std::size_t>(padded - 1) * stride + c] = 0.0;
  }
  for (std::int64_t s = padded >> 1; s >= 1; s >>= 1) {
    for (std::int64_t i = 2 * s - 1; i < padded; i += 2 * s) {
      const std::size_t hi = static_cast<std::size_t>(i) * stride;
      const std::size_t lo = static_cast<std::size_t>(i - s) * stride;
      for (std::size_t c = 0; c < stride; ++c) {
        const double a_lo = a[lo + c], b_lo = b[lo + c];
        const double a_hi = a[hi + c], b_hi = b[hi + c];
        a[lo + c] = a_hi;
        b[lo + c] = b_hi;
        a[hi + c] = a_lo * a_hi;   // exclusive o element (left operand first)
        b[hi + c] = a_lo * b_hi + b_lo;
      }
    }
  }

  // Inclusive state: (exclusive prefix) o e_k, drive component only.
  for (std::int64_t k = 0; k < len; ++k) {
    const std::size_t row = static_cast<std::size_t>(k) * stride;
    for (std::size_t c = 0; c < stride; ++c) {
      states[row + c] = decay[row + c] * b[row + c] + drive[row + c];
    }
  }
}

}  // namespace mat
