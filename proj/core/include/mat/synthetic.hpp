#pragma once

#include <cstdint>

#include "mat/data.hpp"

namespace mat {

// Noiseless per-channel linear ramps x_c(t) = a_c * t + b_c; linearly
// extrapolable, so a least-squares L->T map reaches (near) zero error.
TimeSeriesDataset make_linear_series(std::int64_t steps, std::int64_t channels,
                                     std::uint64_t seed);

// Seeded two-tone sinusoid mixture with additive Gaussian noise. Each
// channel carries its own pair of tones (base periods 24 and 60 steps,
// detuned by up to +-10% per channel) with channel-specific amplitudes and
// phases, so the channels are structurally similar but not interchangeable.
TimeSeriesDataset make_two_tone_series(std::int64_t steps, std::int64_t channels,
                                       double noise_std, std::uint64_t seed);

}  // namespace mat
