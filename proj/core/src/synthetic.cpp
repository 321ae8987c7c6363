#include "mat/synthetic.hpp"

#include <cmath>
#include <cstdio>

namespace mat {

namespace {

// Synthetic 10-minute grid starting 2020-01-01T00:00:00.
std::vector<std::string> synthetic_timestamps(std::int64_t steps) {
  std::vector<std::string> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t i = 0; i < steps; ++i) {
    const std::int64_t minutes = i * 10;
    const std::int64_t day = minutes / (24 * 60);
    const std::int64_t h = (minutes / 60) % 24;
    const std::int64_t m = minutes % 60;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "2020-01-%02dT%02d:%02d:00+D%03d",
                  static_cast<int>(day % 28 + 1), static_cast<int>(h), static_cast<int>(m),
                  static_cast<int>(day));
    ts.emplace_back(buf);
  }
  return ts;
}

}  // namespace

TimeSeriesDataset make_linear_series(std::int64_t steps, std::int64_t channels,
                                     std::uint64_t seed) {
  Rng rng(seed);
  TimeSeriesDataset ds;
  ds.channels = channels;
  ds.steps = steps;
  ds.values.resize(static_cast<std::size_t>(channels * steps));
  for (std::int64_t c = 0; c < channels; ++c) {
    ds.channel_names.push_back("lin" + std::to_string(c));
    const double slope = 0.5 + rng.uniform();       // in [0.5, 1.5)
    const double intercept = 10.0 * rng.normal();
    for (std::int64_t t = 0; t < steps; ++t) {
      ds.values[static_cast<std::size_t>(c * steps + t)] =
          slope * static_cast<double>(t) + intercept;
    }
  }
  ds.timestamps = synthetic_timestamps(steps);
  return ds;
}

TimeSeriesDataset make_two_tone_series(std::int64_t steps, std::int64_t channels,
                                       double noise_std, std::uint64_t seed) {
  Rng rng(seed);
  TimeSeriesDataset ds;
  ds.channels = channels;
  ds.steps = steps;
  ds.values.resize(static_cast<std::size_t>(channels * steps));
  const double two_pi = 6.283185307179586476925286766559;
  // Base periods 24 and 60 steps; each channel detunes both by up to +-10%,
  // so the channels carry two tones each at nearby but distinct frequencies.
  const double base1 = 24.0, base2 = 60.0, spread = 0.1;
  for (std::int64_t c = 0; c < channels; ++c) {
    ds.channel_names.push_back("tone" + std::to_string(c));
    const double detune =
        channels == 1 ? 1.0
                      : 1.0 + spread * (static_cast<double>(c) -
                                        static_cast<double>(channels - 1) / 2.0);
    const double omega1 = two_pi / (base1 * detune);
    const double omega2 = two_pi / (base2 * detune);
    const double a1 = 0.8 + 0.4 * rng.uniform();
    const double a2 = 0.5 + 0.4 * rng.uniform();
    const double p1 = two_pi * rng.uniform();
    const double p2 = two_pi * rng.uniform();
    for (std::int64_t t = 0; t < steps; ++t) {
      const double td = static_cast<double>(t);
      ds.values[static_cast<std::size_t>(c * steps + t)] =
          a1 * std::sin(omega1 * td + p1) + a2 * std::sin(omega2 * td + p2) +
          noise_std * rng.normal();
    }
  }
  ds.timestamps = synthetic_timestamps(steps);
  return ds;
}

}  // namespace mat
