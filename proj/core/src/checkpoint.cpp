#include "mat/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"

namespace mat {

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

namespace blob {

void write(const std::string& path, std::span<const double> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("blob: cannot open " + path + " for writing");
  std::vector<unsigned char> buf(data.size() * 8);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    for (int b = 0; b < 8; ++b) {
      buf[i * 8 + static_cast<std::size_t>(b)] =
          static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("blob: short write to " + path);
}

std::vector<double> read(const std::string& path, std::int64_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("blob: cannot open " + path);
  std::vector<unsigned char> buf(static_cast<std::size_t>(expected_count) * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw DataError("blob: " + path + " holds fewer than " + std::to_string(expected_count) +
                    " doubles");
  }
  std::vector<double> data(static_cast<std::size_t>(expected_count));
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) {
      bits = (bits << 8) | buf[i * 8 + static_cast<std::size_t>(b)];
    }
    std::memcpy(&data[i], &bits, 8);
  }
  return data;
}

}  // namespace blob

namespace {

using nlohmann::json;

json config_to_json_obj(const ModelConfig& cfg) {
  json j;
  j["lookback"] = cfg.lookback;
  j["horizon"] = cfg.horizon;
  j["channels"] = cfg.channels;
  j["n1"] = cfg.n1;
  j["n2"] = cfg.n2;
  j["dim"] = cfg.dim;
  j["state"] = cfg.state;
  j["heads"] = cfg.heads;
  j["conv_width"] = cfg.conv_width;
  j["dropout"] = cfg.dropout;
  j["revin_affine"] = cfg.revin_affine;
  j["positional"] = cfg.positional;
  j["emb_depth"] = cfg.emb_depth;
  j["block_order"] =
      cfg.block_order == BlockOrder::kMambaFirst ? "mamba_first" : "attention_first";
  j["scan_path"] = cfg.scan_path == ScanPath::kParallel ? "parallel" : "sequential";
  j["seed"] = cfg.seed;
  return j;
}

ModelConfig config_from_json_obj(const json& j) {
  ModelConfig cfg;
  cfg.lookback = j.at("lookback").get<std::int64_t>();
  cfg.horizon = j.at("horizon").get<std::int64_t>();
  cfg.channels = j.at("channels").get<std::int64_t>();
  cfg.n1 = j.at("n1").get<std::int64_t>();
  cfg.n2 = j.at("n2").get<std::int64_t>();
  cfg.dim = j.at("dim").get<std::int64_t>();
  cfg.state = j.at("state").get<std::int64_t>();
  cfg.heads = j.at("heads").get<int>();
  cfg.conv_width = j.at("conv_width").get<std::int64_t>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.revin_affine = j.at("revin_affine").get<bool>();
  cfg.positional = j.at("positional").get<bool>();
  cfg.emb_depth = j.at("emb_depth").get<int>();
  const auto order = j.at("block_order").get<std::string>();
  if (order == "mamba_first") {
    cfg.block_order = BlockOrder::kMambaFirst;
  } else if (order == "attention_first") {
    cfg.block_order = BlockOrder::kAttentionFirst;
  } else {
    throw DataError("checkpoint: unknown block_order '" + order + "'");
  }
  const auto path = j.at("scan_path").get<std::string>();
  if (path == "parallel") {
    cfg.scan_path = ScanPath::kParallel;
  } else if (path == "sequential") {
    cfg.scan_path = ScanPath::kSequential;
  } else {
    throw DataError("checkpoint: unknown scan_path '" + path + "'");
  }
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_to_json_obj(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& json_text) {
  return config_from_json_obj(json::parse(json_text));
}

void save_checkpoint(const std::string& stem, const ModelConfig& cfg, const ModelParams& params) {
  json manifest;
  manifest["version"] = 1;
  manifest["format"] = "mat-checkpoint";
  manifest["dtype"] = "float64-le";
  manifest["blob"] = stem.substr(stem.find_last_of('/') + 1) + ".bin";
  manifest["config"] = config_to_json_obj(cfg);

  std::vector<double> flat;
  json entries = json::array();
  visit_params(const_cast<ModelParams&>(params), [&](const std::string& name, Tensor& t) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = static_cast<std::int64_t>(flat.size());
    entries.push_back(e);
    auto v = t.values();
    flat.insert(flat.end(), v.begin(), v.end());
  });
  manifest["params"] = entries;
  manifest["count"] = static_cast<std::int64_t>(flat.size());

  std::ofstream mf(stem + ".json", std::ios::binary | std::ios::trunc);
  if (!mf) throw DataError("checkpoint: cannot open " + stem + ".json for writing");
  mf << manifest.dump(2) << "\n";
  blob::write(stem + ".bin", flat);
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& stem) {
  std::ifstream mf(stem + ".json", std::ios::binary);
  if (!mf) throw DataError("checkpoint: cannot open " + stem + ".json");
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw DataError("checkpoint: malformed manifest " + stem + ".json: " + e.what());
  }
  if (!manifest.contains("version")) throw DataError("checkpoint: manifest missing version");
  if (manifest.at("version").get<int>() != 1) {
    throw DataError("checkpoint: unsupported version " + manifest.at("version").dump());
  }
  if (manifest.value("dtype", "") != "float64-le") {
    throw DataError("checkpoint: unsupported dtype");
  }

  ModelConfig cfg = config_from_json_obj(manifest.at("config"));
  const auto count = manifest.at("count").get<std::int64_t>();
  std::vector<double> flat = blob::read(stem + ".bin", count);

  struct Entry {
    Shape shape;
    std::int64_t offset;
  };
  std::map<std::string, Entry> by_name;
  for (const auto& e : manifest.at("params")) {
    by_name[e.at("name").get<std::string>()] =
        Entry{e.at("shape").get<Shape>(), e.at("offset").get<std::int64_t>()};
  }

  Rng throwaway(0);
  ModelParams params = ModelParams::init(cfg, throwaway);
  visit_params(params, [&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint: parameter '" + name + "' missing");
    if (it->second.shape != t.shape()) {
      throw DataError("checkpoint: parameter '" + name + "' has shape " +
                      shape_str(it->second.shape) + ", expected " + shape_str(t.shape()));
    }
    const auto n = shape_size(it->second.shape);
    if (it->second.offset < 0 || it->second.offset + n > count) {
      throw DataError("checkpoint: parameter '" + name + "' offset out of range");
    }
    std::vector<double> v(flat.begin() + it->second.offset, flat.begin() + it->second.offset + n);
    t = Tensor(it->second.shape, std::move(v));
    by_name.erase(it);
  });
  if (!by_name.empty()) {
    throw DataError("checkpoint: unexpected parameter '" + by_name.begin()->first + "'");
  }
  return {cfg, params};
}

}  // namespace mat
