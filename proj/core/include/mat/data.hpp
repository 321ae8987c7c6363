#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mat/rng.hpp"
#include "mat/tensor.hpp"

namespace mat {

// Channels-by-steps matrix of observations plus metadata. Immutable after
// ingestion; loaders always produce fully finite values (the imputation
// policy fills gaps or the strict mode rejects them).
struct TimeSeriesDataset {
  std::vector<std::string> channel_names;  // M entries
  std::vector<std::string> timestamps;     // n ISO-8601 strings
  std::vector<double> values;              // row-major (M, n)
  std::int64_t channels = 0;
  std::int64_t steps = 0;

  double at(std::int64_t c, std::int64_t t) const {
    return values[static_cast<std::size_t>(c * steps + t)];
  }
};

enum class Imputation { kFillForward, kStrict };

struct CsvOptions {
  std::string time_column = "Date Time";  // Jena layout, dd.mm.yyyy HH:MM:SS
  Imputation imputation = Imputation::kFillForward;
};

// Parses a weather-style CSV: a timestamp column followed by numeric
// channels. Malformed rows raise DataError with the line number; decreasing
// timestamps raise DataError. Non-finite or empty cells are forward-filled
// (then back-filled for a leading gap) unless strict mode is on.
TimeSeriesDataset load_csv(const std::string& path, const CsvOptions& options = {});

// Binary cache in the manifest + f64 blob layout; much faster to reload.
void save_dataset_cache(const std::string& stem, const TimeSeriesDataset& ds);
TimeSeriesDataset load_dataset_cache(const std::string& stem);

// Contiguous chronological segment of a dataset.
struct Split {
  std::shared_ptr<const TimeSeriesDataset> data;
  std::int64_t begin = 0;
  std::int64_t length = 0;
  std::string name;
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

// Non-shuffled contiguous segments in time order; each segment gets
// floor(n * ratio) steps. Ratios must be nonnegative and sum to at most 1.
std::array<Split, 3> chronological_split(std::shared_ptr<const TimeSeriesDataset> ds,
                                         const SplitRatios& ratios);

// One supervised pair: x is the (M, L) look-back block, y the (M, T) target
// block immediately following it. origin is the global step index of the
// first look-back column.
struct WindowSample {
  Tensor x;
  Tensor y;
  std::int64_t origin = 0;
};

// Lazy view of every sliding window inside one split; there are exactly
// length - L - T + 1 of them.
class WindowSet {
 public:
  WindowSet(Split split, std::int64_t lookback, std::int64_t horizon);  // throws DataError

  std::int64_t size() const { return count_; }
  std::int64_t lookback() const { return lookback_; }
  std::int64_t horizon() const { return horizon_; }
  const Split& split() const { return split_; }

  WindowSample get(std::int64_t i) const;
  std::int64_t origin(std::int64_t i) const { return split_.begin + i; }

 private:
  Split split_;
  std::int64_t lookback_;
  std::int64_t horizon_;
  std::int64_t count_;
};

// Batch order over window indices: a seeded permutation when shuffling, the
// identity otherwise; the final partial batch is kept.
std::vector<std::vector<std::int64_t>> batch_indices(std::int64_t count, std::int64_t batch_size,
                                                     bool shuffle, Rng& rng);

// Per-channel standardization fitted on the training split only.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> stddev;  // >= eps

  static Scaler fit(const Split& train);
  TimeSeriesDataset apply(const TimeSeriesDataset& ds) const;
  // Undo the scaling on a (M, x) block of model outputs.
  Tensor invert(const Tensor& scaled) const;
};

}  // namespace mat
