#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mat/model.hpp"
#include "mat/train.hpp"

namespace mat::cli {

// Fully resolved run configuration: defaults, overlaid by a flat dotted-key
// JSON config file, overlaid by command-line flags (flags win). Unknown keys
// in the file are rejected.
struct RunConfig {
  std::string data_path;
  std::string time_column = "Date Time";
  bool strict_imputation = false;
  double train_ratio = 0.7;
  double val_ratio = 0.1;
  double test_ratio = 0.2;

  ModelConfig model;
  TrainConfig train;

  std::string out_dir = "out";
  std::string checkpoint;            // input stem for evaluate/forecast
  std::int64_t origin = -1;          // forecast window origin, -1 = last
  std::string forecast_split = "test";

  void apply_seed(std::uint64_t seed) {
    model.seed = seed;
    train.seed = seed;
  }
};

// Flag values captured by CLI11; unset optionals leave the file/default
// values untouched.
struct FlagOverrides {
  std::optional<std::string> config_path;
  std::optional<std::string> data_path;
  std::optional<std::int64_t> lookback, horizon, n1, n2, dim, state;
  std::optional<int> heads;
  std::optional<double> dropout, lr;
  std::optional<std::int64_t> epochs, batch;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir, metrics_space, checkpoint, forecast_split;
  std::optional<int> workers;
  std::optional<std::int64_t> origin;
};

// Resolution pipeline; throws ConfigError on unknown keys or bad values.
RunConfig resolve_config(const FlagOverrides& flags);

// Flat dotted-key JSON snapshot of a resolved config (sorted keys).
std::string config_echo_json(const RunConfig& cfg);

}  // namespace mat::cli
