#include "run_config.hpp"

#include <cstdlib>
#include <fstream>

#include "json.hpp"

namespace mat::cli {

namespace {

using nlohmann::json;

BlockOrder parse_block_order(const std::string& s) {
  if (s == "mamba_first") return BlockOrder::kMambaFirst;
  if (s == "attention_first") return BlockOrder::kAttentionFirst;
  throw ConfigError("config: model.block_order must be 'mamba_first' or 'attention_first'");
}

ScanPath parse_scan_path(const std::string& s) {
  if (s == "parallel") return ScanPath::kParallel;
  if (s == "sequential") return ScanPath::kSequential;
  throw ConfigError("config: model.scan_path must be 'parallel' or 'sequential'");
}

MetricsSpace parse_metrics_space(const std::string& s) {
  if (s == "scaled") return MetricsSpace::kScaled;
  if (s == "raw") return MetricsSpace::kRaw;
  throw ConfigError("config: train.metrics_space must be 'scaled' or 'raw'");
}

void apply_file(RunConfig& cfg, const std::string& path, bool* seed_from_file) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config: malformed JSON in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object of dotted keys");

  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "data.path") cfg.data_path = value.get<std::string>();
      else if (key == "data.time_column") cfg.time_column = value.get<std::string>();
      else if (key == "data.imputation") {
        const auto s = value.get<std::string>();
        if (s == "fill") cfg.strict_imputation = false;
        else if (s == "strict") cfg.strict_imputation = true;
        else throw ConfigError("config: data.imputation must be 'fill' or 'strict'");
      } else if (key == "data.train_ratio") cfg.train_ratio = value.get<double>();
      else if (key == "data.val_ratio") cfg.val_ratio = value.get<double>();
      else if (key == "data.test_ratio") cfg.test_ratio = value.get<double>();
      else if (key == "model.lookback") cfg.model.lookback = value.get<std::int64_t>();
      else if (key == "model.horizon") cfg.model.horizon = value.get<std::int64_t>();
      else if (key == "model.n1") cfg.model.n1 = value.get<std::int64_t>();
      else if (key == "model.n2") cfg.model.n2 = value.get<std::int64_t>();
      else if (key == "model.dim") cfg.model.dim = value.get<std::int64_t>();
      else if (key == "model.state") cfg.model.state = value.get<std::int64_t>();
      else if (key == "model.heads") cfg.model.heads = value.get<int>();
      else if (key == "model.conv_width") cfg.model.conv_width = value.get<std::int64_t>();
      else if (key == "model.dropout") cfg.model.dropout = value.get<double>();
      else if (key == "model.revin_affine") cfg.model.revin_affine = value.get<bool>();
      else if (key == "model.positional") cfg.model.positional = value.get<bool>();
      else if (key == "model.emb_depth") cfg.model.emb_depth = value.get<int>();
      else if (key == "model.block_order") cfg.model.block_order = parse_block_order(value.get<std::string>());
      else if (key == "model.scan_path") cfg.model.scan_path = parse_scan_path(value.get<std::string>());
      else if (key == "train.epochs") cfg.train.epochs = value.get<std::int64_t>();
      else if (key == "train.batch") cfg.train.batch_size = value.get<std::int64_t>();
      else if (key == "train.lr") cfg.train.lr = value.get<double>();
      else if (key == "train.seed") { cfg.apply_seed(value.get<std::uint64_t>()); *seed_from_file = true; }
      else if (key == "train.patience") cfg.train.patience = value.get<std::int64_t>();
      else if (key == "train.clip_norm") cfg.train.clip_norm = value.get<double>();
      else if (key == "train.metrics_space") cfg.train.metrics_space = parse_metrics_space(value.get<std::string>());
      else if (key == "train.workers") cfg.train.workers = value.get<int>();
      else if (key == "out.dir") cfg.out_dir = value.get<std::string>();
      else if (key == "eval.checkpoint") cfg.checkpoint = value.get<std::string>();
      else if (key == "forecast.origin") cfg.origin = value.get<std::int64_t>();
      else if (key == "forecast.split") cfg.forecast_split = value.get<std::string>();
      else throw ConfigError("config: unknown key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for key '" + key + "': " + e.what());
    }
  }
}

}  // namespace

RunConfig resolve_config(const FlagOverrides& flags) {
  RunConfig cfg;
  bool seed_set = false;

  if (flags.config_path) apply_file(cfg, *flags.config_path, &seed_set);

  if (flags.data_path) cfg.data_path = *flags.data_path;
  if (flags.lookback) cfg.model.lookback = *flags.lookback;
  if (flags.horizon) cfg.model.horizon = *flags.horizon;
  if (flags.n1) cfg.model.n1 = *flags.n1;
  if (flags.n2) cfg.model.n2 = *flags.n2;
  if (flags.dim) cfg.model.dim = *flags.dim;
  if (flags.state) cfg.model.state = *flags.state;
  if (flags.heads) cfg.model.heads = *flags.heads;
  if (flags.dropout) cfg.model.dropout = *flags.dropout;
  if (flags.epochs) cfg.train.epochs = *flags.epochs;
  if (flags.batch) cfg.train.batch_size = *flags.batch;
  if (flags.lr) cfg.train.lr = *flags.lr;
  if (flags.out_dir) cfg.out_dir = *flags.out_dir;
  if (flags.metrics_space) cfg.train.metrics_space = parse_metrics_space(*flags.metrics_space);
  if (flags.workers) cfg.train.workers = *flags.workers;
  if (flags.checkpoint) cfg.checkpoint = *flags.checkpoint;
  if (flags.origin) cfg.origin = *flags.origin;
  if (flags.forecast_split) cfg.forecast_split = *flags.forecast_split;

  if (flags.seed) {
    cfg.apply_seed(*flags.seed);
  } else if (!seed_set) {
    if (const char* env = std::getenv("MAT_SEED")) {
      char* end = nullptr;
      const auto v = std::strtoull(env, &end, 10);
      if (end == nullptr || *end != '\0') {
        throw ConfigError("config: MAT_SEED must be an unsigned integer, got '" + std::string(env) +
                          "'");
      }
      cfg.apply_seed(v);
    }
  }
  return cfg;
}

std::string config_echo_json(const RunConfig& cfg) {
  json j;
  j["data.path"] = cfg.data_path;
  j["data.time_column"] = cfg.time_column;
  j["data.imputation"] = cfg.strict_imputation ? "strict" : "fill";
  j["data.train_ratio"] = cfg.train_ratio;
  j["data.val_ratio"] = cfg.val_ratio;
  j["data.test_ratio"] = cfg.test_ratio;
  j["model.lookback"] = cfg.model.lookback;
  j["model.horizon"] = cfg.model.horizon;
  j["model.n1"] = cfg.model.n1;
  j["model.n2"] = cfg.model.n2;
  j["model.dim"] = cfg.model.dim;
  j["model.state"] = cfg.model.state;
  j["model.heads"] = cfg.model.heads;
  j["model.conv_width"] = cfg.model.conv_width;
  j["model.dropout"] = cfg.model.dropout;
  j["model.revin_affine"] = cfg.model.revin_affine;
  j["model.positional"] = cfg.model.positional;
  j["model.emb_depth"] = cfg.model.emb_depth;
  j["model.block_order"] =
      cfg.model.block_order == BlockOrder::kMambaFirst ? "mamba_first" : "attention_first";
  j["model.scan_path"] = cfg.model.scan_path == ScanPath::kParallel ? "parallel" : "sequential";
  j["train.epochs"] = cfg.train.epochs;
  j["train.batch"] = cfg.train.batch_size;
  j["train.lr"] = cfg.train.lr;
  j["train.seed"] = cfg.train.seed;
  j["train.patience"] = cfg.train.patience;
  j["train.clip_norm"] = cfg.train.clip_norm;
  j["train.metrics_space"] =
      cfg.train.metrics_space == MetricsSpace::kScaled ? "scaled" : "raw";
  j["train.workers"] = cfg.train.workers;
  j["out.dir"] = cfg.out_dir;
  j["eval.checkpoint"] = cfg.checkpoint;
  j["forecast.origin"] = cfg.origin;
  j["forecast.split"] = cfg.forecast_split;
  return j.dump(2);
}

}  // namespace mat::cli
