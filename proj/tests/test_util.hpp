#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mat/tensor.hpp"

namespace testutil {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline bool bits_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mat_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Jena-style weather CSV fixture: "Date Time" in dd.mm.yyyy HH:MM:SS on a
// 10-minute grid, followed by numeric channels.
inline std::string write_weather_csv(const std::filesystem::path& path, std::int64_t steps,
                                     std::int64_t channels, std::uint64_t seed) {
  mat::Rng rng(seed);
  std::ofstream out(path, std::ios::binary);
  out << "Date Time";
  static const char* kJenaNames[] = {
      "p (mbar)",      "T (degC)",    "Tpot (K)",       "Tdew (degC)", "rh (%)",
      "VPmax (mbar)",  "VPact (mbar)", "VPdef (mbar)",  "sh (g/kg)",   "H2OC (mmol/mol)",
      "rho (g/m**3)",  "wv (m/s)",    "max. wv (m/s)",  "wd (deg)",    "rain (mm)",
      "raining (s)",   "SWDR (W/m2)", "PAR (umol/m2/s)", "max. PAR",   "Tlog (degC)",
      "CO2 (ppm)"};
  for (std::int64_t c = 0; c < channels; ++c) {
    if (c < 21) out << "," << kJenaNames[c];
    else out << ",extra" << c;
  }
  out << "\n";
  std::vector<double> level(static_cast<std::size_t>(channels));
  for (auto& l : level) l = 10.0 * rng.normal();
  for (std::int64_t t = 0; t < steps; ++t) {
    const std::int64_t minutes = t * 10;
    const std::int64_t day = minutes / (24 * 60);
    char ts[48];
    std::snprintf(ts, sizeof(ts), "%02d.%02d.2020 %02d:%02d:00",
                  static_cast<int>(day % 28 + 1), static_cast<int>(day / 28 % 12 + 1),
                  static_cast<int>(minutes / 60 % 24), static_cast<int>(minutes % 60));
    out << ts;
    for (std::int64_t c = 0; c < channels; ++c) {
      level[static_cast<std::size_t>(c)] += 0.1 * rng.normal();
      char v[32];
      std::snprintf(v, sizeof(v), "%.4f", level[static_cast<std::size_t>(c)] +
                                              std::sin(0.05 * static_cast<double>(t + c)));
      out << "," << v;
    }
    out << "\n";
  }
  return path.string();
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace testutil
