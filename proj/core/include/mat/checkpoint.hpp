#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mat/model.hpp"

namespace mat {

// Checkpoints are a pair of files sharing a stem: <stem>.json holds the
// manifest (mandatory version field, config snapshot, parameter names,
// shapes and element offsets) and <stem>.bin holds the concatenated values
// as little-endian IEEE-754 doubles.
void save_checkpoint(const std::string& stem, const ModelConfig& cfg, const ModelParams& params);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& stem);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

namespace blob {

// Raw little-endian f64 array files used by checkpoints and dataset caches.
void write(const std::string& path, std::span<const double> data);
std::vector<double> read(const std::string& path, std::int64_t expected_count);

}  // namespace blob

}  // namespace mat
