#include "mat/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "mat/checkpoint.hpp"

namespace mat {

namespace {

constexpr double kScalerEps = 1e-8;

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n\"");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
      cell.push_back(ch);
    } else if (ch == ',' && !quoted) {
      cells.push_back(cell);
      cell.clear();
    } else {
      cell.push_back(ch);
    }
  }
  cells.push_back(cell);
  return cells;
}

// Jena timestamps use dd.mm.yyyy HH:MM:SS; ISO strings pass through.
// Returns a sortable ISO-8601 string.
std::string normalize_timestamp(const std::string& raw, std::size_t line_no) {
  std::string s = trim(raw);
  int d = 0, mo = 0, y = 0, h = 0, mi = 0, sec = 0;
  if (std::sscanf(s.c_str(), "%d.%d.%d %d:%d:%d", &d, &mo, &y, &h, &mi, &sec) == 6) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d", y, mo, d, h, mi, sec);
    return buf;
  }
  if (std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &d, &h, &mi, &sec) == 6 ||
      std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%d", &y, &mo, &d, &h, &mi, &sec) == 6) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d", y, mo, d, h, mi, sec);
    return buf;
  }
  throw DataError("load_csv: line " + std::to_string(line_no) + ": unparsable timestamp '" + s +
                  "'");
}

bool parse_cell(const std::string& raw, double* out) {
  std::string s = trim(raw);
  if (s.empty()) return false;
  // Treat the usual spellings of missing data as gaps.
  std::string lower;
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "nan" || lower == "na" || lower == "null" || lower == "-") return false;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == nullptr || *end != '\0') {
    throw DataError("load_csv: unparsable numeric cell '" + s + "'");
  }
  if (!std::isfinite(v)) return false;
  return (*out = v, true);
}

}  // namespace

TimeSeriesDataset load_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError("load_csv: " + path + " is empty");
  auto header = split_line(line);
  if (header.size() < 2) throw DataError("load_csv: header needs a time column plus channels");
  if (trim(header[0]) != options.time_column) {
    throw DataError("load_csv: expected first column '" + options.time_column + "', found '" +
                    trim(header[0]) + "'");
  }

  TimeSeriesDataset ds;
  for (std::size_t i = 1; i < header.size(); ++i) ds.channel_names.push_back(trim(header[i]));
  const auto m = static_cast<std::int64_t>(ds.channel_names.size());

  // Column-major collection first, transposed into (M, n) at the end.
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<bool>> present;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_line(line);
    if (static_cast<std::int64_t>(cells.size()) != m + 1) {
      throw DataError("load_csv: line " + std::to_string(line_no) + ": expected " +
                      std::to_string(m + 1) + " cells, found " + std::to_string(cells.size()));
    }
    std::string ts = normalize_timestamp(cells[0], line_no);
    if (!ds.timestamps.empty() && ts < ds.timestamps.back()) {
      throw DataError("load_csv: line " + std::to_string(line_no) +
                      ": timestamps are not monotone ('" + ts + "' after '" +
                      ds.timestamps.back() + "')");
    }
    ds.timestamps.push_back(std::move(ts));

    std::vector<double> row(static_cast<std::size_t>(m), 0.0);
    std::vector<bool> ok(static_cast<std::size_t>(m), false);
    for (std::int64_t c = 0; c < m; ++c) {
      double v = 0.0;
      bool have = false;
      try {
        have = parse_cell(cells[static_cast<std::size_t>(c + 1)], &v);
      } catch (const DataError& e) {
        throw DataError("load_csv: line " + std::to_string(line_no) + ": " + e.what());
      }
      if (!have && options.imputation == Imputation::kStrict) {
        throw DataError("load_csv: line " + std::to_string(line_no) + ": missing value in channel '" +
                        ds.channel_names[static_cast<std::size_t>(c)] + "' (strict mode)");
      }
      row[static_cast<std::size_t>(c)] = v;
      ok[static_cast<std::size_t>(c)] = have;
    }
    rows.push_back(std::move(row));
    present.push_back(std::move(ok));
  }
  if (rows.empty()) throw DataError("load_csv: " + path + " holds no data rows");

  const auto n = static_cast<std::int64_t>(rows.size());
  ds.channels = m;
  ds.steps = n;
  ds.values.assign(static_cast<std::size_t>(m * n), 0.0);

  // Forward fill, then back fill any leading gap, per channel.
  for (std::int64_t c = 0; c < m; ++c) {
    double last = 0.0;
    bool seen = false;
    for (std::int64_t t = 0; t < n; ++t) {
      if (present[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)]) {
        last = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
        seen = true;
      } else if (!seen) {
        continue;  // leading gap, filled below
      }
      ds.values[static_cast<std::size_t>(c * n + t)] = last;
    }
    if (!seen) {
      throw DataError("load_csv: channel '" + ds.channel_names[static_cast<std::size_t>(c)] +
                      "' has no finite values");
    }
    double first = 0.0;
    for (std::int64_t t = 0; t < n; ++t) {
      if (present[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)]) {
        first = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
        break;
      }
    }
    for (std::int64_t t = 0; t < n; ++t) {
      if (present[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)]) break;
      ds.values[static_cast<std::size_t>(c * n + t)] = first;
    }
  }
  return ds;
}

void save_dataset_cache(const std::string& stem, const TimeSeriesDataset& ds) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["format"] = "mat-dataset";
  manifest["dtype"] = "float64-le";
  manifest["blob"] = stem.substr(stem.find_last_of('/') + 1) + ".bin";
  manifest["channels"] = ds.channel_names;
  manifest["steps"] = ds.steps;
  manifest["timestamps"] = ds.timestamps;
  std::ofstream mf(stem + ".json", std::ios::binary | std::ios::trunc);
  if (!mf) throw DataError("dataset cache: cannot open " + stem + ".json for writing");
  mf << manifest.dump() << "\n";
  blob::write(stem + ".bin", ds.values);
}

TimeSeriesDataset load_dataset_cache(const std::string& stem) {
  std::ifstream mf(stem + ".json", std::ios::binary);
  if (!mf) throw DataError("dataset cache: cannot open " + stem + ".json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset cache: malformed manifest: ") + e.what());
  }
  if (manifest.value("version", 0) != 1 || manifest.value("format", "") != "mat-dataset") {
    throw DataError("dataset cache: unsupported manifest");
  }
  TimeSeriesDataset ds;
  ds.channel_names = manifest.at("channels").get<std::vector<std::string>>();
  ds.timestamps = manifest.at("timestamps").get<std::vector<std::string>>();
  ds.steps = manifest.at("steps").get<std::int64_t>();
  ds.channels = static_cast<std::int64_t>(ds.channel_names.size());
  ds.values = blob::read(stem + ".bin", ds.channels * ds.steps);
  return ds;
}

std::array<Split, 3> chronological_split(std::shared_ptr<const TimeSeriesDataset> ds,
                                         const SplitRatios& ratios) {
  if (!(ratios.train > 0.0) || ratios.val < 0.0 || ratios.test < 0.0) {
    throw ConfigError("split: train ratio must be positive and none may be negative");
  }
  if (ratios.train + ratios.val + ratios.test > 1.0 + 1e-12) {
    throw ConfigError("split: ratios sum to more than 1");
  }
  const auto n = ds->steps;
  const auto n_train = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * ratios.train));
  const auto n_val = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * ratios.val));
  const auto n_test = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * ratios.test));
  return {Split{ds, 0, n_train, "train"}, Split{ds, n_train, n_val, "val"},
          Split{ds, n_train + n_val, n_test, "test"}};
}

WindowSet::WindowSet(Split split, std::int64_t lookback, std::int64_t horizon)
    : split_(std::move(split)), lookback_(lookback), horizon_(horizon) {
  if (lookback_ < 1 || horizon_ < 1) {
    throw ConfigError("windows: lookback and horizon must be positive");
  }
  count_ = split_.length - lookback_ - horizon_ + 1;
  if (count_ < 1) {
    throw DataError("windows: split '" + split_.name + "' has " + std::to_string(split_.length) +
                    " steps, fewer than lookback+horizon = " +
                    std::to_string(lookback_ + horizon_));
  }
}

WindowSample WindowSet::get(std::int64_t i) const {
  if (i < 0 || i >= count_) {
    throw ContractError("windows: index " + std::to_string(i) + " out of range");
  }
  const auto& ds = *split_.data;
  const auto m = ds.channels;
  const auto o = split_.begin + i;
  std::vector<double> x(static_cast<std::size_t>(m * lookback_));
  std::vector<double> y(static_cast<std::size_t>(m * horizon_));
  for (std::int64_t c = 0; c < m; ++c) {
    for (std::int64_t t = 0; t < lookback_; ++t) {
      x[static_cast<std::size_t>(c * lookback_ + t)] = ds.at(c, o + t);
    }
    for (std::int64_t t = 0; t < horizon_; ++t) {
      y[static_cast<std::size_t>(c * horizon_ + t)] = ds.at(c, o + lookback_ + t);
    }
  }
  return WindowSample{Tensor({m, lookback_}, std::move(x)), Tensor({m, horizon_}, std::move(y)),
                      o};
}

std::vector<std::vector<std::int64_t>> batch_indices(std::int64_t count, std::int64_t batch_size,
                                                     bool shuffle, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batches: batch size must be positive");
  std::vector<std::int64_t> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    // Fisher-Yates with the explicit generator so equal seeds give equal
    // orders on every platform.
    for (std::int64_t i = count - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
  }
  std::vector<std::vector<std::int64_t>> batches;
  for (std::int64_t b = 0; b < count; b += batch_size) {
    const auto e = std::min(count, b + batch_size);
    batches.emplace_back(order.begin() + b, order.begin() + e);
  }
  return batches;
}

Scaler Scaler::fit(const Split& train) {
  if (train.length < 1) throw DataError("scaler: split '" + train.name + "' is empty");
  const auto& ds = *train.data;
  Scaler s;
  s.mean.resize(static_cast<std::size_t>(ds.channels));
  s.stddev.resize(static_cast<std::size_t>(ds.channels));
  for (std::int64_t c = 0; c < ds.channels; ++c) {
    double sum = 0.0;
    for (std::int64_t t = 0; t < train.length; ++t) sum += ds.at(c, train.begin + t);
    const double mean = sum / static_cast<double>(train.length);
    double sq = 0.0;
    for (std::int64_t t = 0; t < train.length; ++t) {
      const double d = ds.at(c, train.begin + t) - mean;
      sq += d * d;
    }
    s.mean[static_cast<std::size_t>(c)] = mean;
    s.stddev[static_cast<std::size_t>(c)] =
        std::max(std::sqrt(sq / static_cast<double>(train.length)), kScalerEps);
  }
  return s;
}

TimeSeriesDataset Scaler::apply(const TimeSeriesDataset& ds) const {
  if (static_cast<std::int64_t>(mean.size()) != ds.channels) {
    throw DimensionError("scaler: fitted on " + std::to_string(mean.size()) +
                         " channels, dataset has " + std::to_string(ds.channels));
  }
  TimeSeriesDataset out = ds;
  for (std::int64_t c = 0; c < ds.channels; ++c) {
    const double m = mean[static_cast<std::size_t>(c)];
    const double inv = 1.0 / stddev[static_cast<std::size_t>(c)];
    for (std::int64_t t = 0; t < ds.steps; ++t) {
      out.values[static_cast<std::size_t>(c * ds.steps + t)] = (ds.at(c, t) - m) * inv;
    }
  }
  return out;
}

Tensor Scaler::invert(const Tensor& scaled) const {
  if (scaled.rows() != static_cast<std::int64_t>(mean.size())) {
    throw DimensionError("scaler: cannot invert " + shape_str(scaled.shape()) + " with " +
                         std::to_string(mean.size()) + " fitted channels");
  }
  Tensor out = scaled.detached();
  auto v = out.values_mut();
  const auto cols = scaled.cols();
  for (std::int64_t c = 0; c < scaled.rows(); ++c) {
    for (std::int64_t t = 0; t < cols; ++t) {
      auto& x = v[static_cast<std::size_t>(c * cols + t)];
      x = x * stddev[static_cast<std::size_t>(c)] + mean[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

}  // namespace mat
