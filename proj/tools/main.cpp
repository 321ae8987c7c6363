#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "json.hpp"

#include "mat/checkpoint.hpp"
#include "mat/data.hpp"
#include "mat/gradsuite.hpp"
#include "mat/scan.hpp"
#include "mat/train.hpp"
#include "run_config.hpp"

namespace {

namespace fs = std::filesystem;
using namespace mat;
using cli::RunConfig;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitVerification = 5;

void emit_error(int code, const std::string& kind, const std::string& message) {
  nlohmann::json j;
  j["error"] = {{"code", code}, {"kind", kind}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << content;
}

void write_config_echo(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_file(fs::path(cfg.out_dir) / "config_resolved.json", cli::config_echo_json(cfg) + "\n");
}

struct PreparedData {
  std::shared_ptr<const TimeSeriesDataset> raw;
  std::shared_ptr<const TimeSeriesDataset> scaled;
  std::array<Split, 3> splits;  // over the scaled dataset
  Scaler scaler;
  std::string name;
};

PreparedData prepare_data(const RunConfig& cfg) {
  if (cfg.data_path.empty()) throw ConfigError("no dataset given; pass --data or data.path");
  CsvOptions opt;
  opt.time_column = cfg.time_column;
  opt.imputation = cfg.strict_imputation ? Imputation::kStrict : Imputation::kFillForward;

  PreparedData pd;
  pd.raw = std::make_shared<TimeSeriesDataset>(load_csv(cfg.data_path, opt));
  pd.name = fs::path(cfg.data_path).stem().string();

  SplitRatios ratios{cfg.train_ratio, cfg.val_ratio, cfg.test_ratio};
  auto raw_splits = chronological_split(pd.raw, ratios);
  pd.scaler = Scaler::fit(raw_splits[0]);
  pd.scaled = std::make_shared<TimeSeriesDataset>(pd.scaler.apply(*pd.raw));
  pd.splits = {Split{pd.scaled, raw_splits[0].begin, raw_splits[0].length, "train"},
               Split{pd.scaled, raw_splits[1].begin, raw_splits[1].length, "val"},
               Split{pd.scaled, raw_splits[2].begin, raw_splits[2].length, "test"}};
  return pd;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_train(RunConfig cfg) {
  PreparedData pd = prepare_data(cfg);
  cfg.model.channels = pd.scaled->channels;
  cfg.model.validate();
  cfg.train.validate();
  write_config_echo(cfg);

  WindowSet train_ws(pd.splits[0], cfg.model.lookback, cfg.model.horizon);
  std::unique_ptr<WindowSet> val_ws;
  if (pd.splits[1].length >= cfg.model.lookback + cfg.model.horizon) {
    val_ws = std::make_unique<WindowSet>(pd.splits[1], cfg.model.lookback, cfg.model.horizon);
  }

  Rng init_rng(cfg.model.seed);
  ModelParams params = ModelParams::init(cfg.model, init_rng);
  std::cout << "training mat: " << count_params(params) << " parameters, "
            << train_ws.size() << " train windows, " << cfg.train.epochs << " epochs\n";

  TrainResult result =
      train_model(cfg.model, params, train_ws, val_ws.get(), cfg.train, &pd.scaler);
  result.report.dataset = pd.name;

  const fs::path out(cfg.out_dir);
  save_checkpoint((out / "checkpoint").string(), cfg.model, result.params);
  write_file(out / "loss_curve.csv", result.report.loss_curve_csv());

  if (result.aborted) {
    // Last-good checkpoint already written above.
    write_file(out / "metrics.json", result.report.to_json() + "\n");
    emit_error(kExitNumeric, "numeric", result.abort_reason);
    return kExitNumeric;
  }

  if (pd.splits[2].length >= cfg.model.lookback + cfg.model.horizon) {
    WindowSet test_ws(pd.splits[2], cfg.model.lookback, cfg.model.horizon);
    result.report.metrics = evaluate_forecaster(cfg.model, result.params, test_ws,
                                                cfg.train.metrics_space, &pd.scaler);
  }
  write_file(out / "metrics.json", result.report.to_json() + "\n");
  write_file(out / "metrics.csv", MetricsReport::csv_header() + result.report.csv_row());

  std::cout << "test mse " << fmt_g17(result.report.metrics.mse) << "  mae "
            << fmt_g17(result.report.metrics.mae) << "\n";
  std::cout << "wrote " << (out / "checkpoint.json").string() << "\n";
  return kExitOk;
}

int cmd_evaluate(RunConfig cfg) {
  if (cfg.checkpoint.empty()) {
    throw ConfigError("evaluate needs a checkpoint; pass --checkpoint or eval.checkpoint");
  }
  auto [mcfg, params] = load_checkpoint(cfg.checkpoint);
  cfg.model = mcfg;  // the checkpoint defines the architecture
  PreparedData pd = prepare_data(cfg);
  if (pd.scaled->channels != mcfg.channels) {
    throw DataError("evaluate: dataset has " + std::to_string(pd.scaled->channels) +
                    " channels but the checkpoint expects " + std::to_string(mcfg.channels));
  }
  write_config_echo(cfg);

  WindowSet train_ws(pd.splits[0], mcfg.lookback, mcfg.horizon);
  WindowSet test_ws(pd.splits[2], mcfg.lookback, mcfg.horizon);

  const Metrics model_m =
      evaluate_forecaster(mcfg, params, test_ws, cfg.train.metrics_space, &pd.scaler);
  const Metrics naive_m = naive_repeat_metrics(test_ws, cfg.train.metrics_space, &pd.scaler);
  const LinearBaseline linear = LinearBaseline::fit(train_ws);
  const Metrics linear_m = linear.evaluate(test_ws, cfg.train.metrics_space, &pd.scaler);

  std::string csv = MetricsReport::csv_header();
  auto row = [&](const std::string& name, const Metrics& m) {
    MetricsReport r;
    r.dataset = pd.name;
    r.horizon = mcfg.horizon;
    r.model = name;
    r.metrics = m;
    r.seed = cfg.train.seed;
    csv += r.csv_row();
  };
  row("mat", model_m);
  row("naive", naive_m);
  row("linear", linear_m);

  fs::path out(cfg.out_dir);
  write_file(out / "eval_metrics.csv", csv);
  std::cout << csv;
  return kExitOk;
}

int cmd_forecast(RunConfig cfg) {
  if (cfg.checkpoint.empty()) {
    throw ConfigError("forecast needs a checkpoint; pass --checkpoint or eval.checkpoint");
  }
  auto [mcfg, params] = load_checkpoint(cfg.checkpoint);
  cfg.model = mcfg;
  PreparedData pd = prepare_data(cfg);
  write_config_echo(cfg);

  int split_idx = cfg.forecast_split == "train" ? 0 : cfg.forecast_split == "val" ? 1 : 2;
  if (cfg.forecast_split != "train" && cfg.forecast_split != "val" &&
      cfg.forecast_split != "test") {
    throw ConfigError("forecast.split must be train, val or test");
  }
  WindowSet ws(pd.splits[static_cast<std::size_t>(split_idx)], mcfg.lookback, mcfg.horizon);
  std::int64_t index = ws.size() - 1;
  if (cfg.origin >= 0) {
    index = cfg.origin - ws.split().begin;
    if (index < 0 || index >= ws.size()) {
      throw ConfigError("forecast: origin " + std::to_string(cfg.origin) +
                        " is outside split '" + cfg.forecast_split + "' (valid range " +
                        std::to_string(ws.split().begin) + ".." +
                        std::to_string(ws.split().begin + ws.size() - 1) + ")");
    }
  }

  WindowSample sample = ws.get(index);
  Rng rng(0);
  Tensor pred = model_forward(sample.x, params, mcfg, DropoutMode::kEval, rng);
  pred = pd.scaler.invert(pred);  // forecasts come out in raw data units

  std::string csv = "channel";
  for (std::int64_t t = 0; t < mcfg.horizon; ++t) csv += ",t+" + std::to_string(t + 1);
  csv += "\n";
  for (std::int64_t c = 0; c < pred.rows(); ++c) {
    csv += pd.scaled->channel_names[static_cast<std::size_t>(c)];
    for (std::int64_t t = 0; t < mcfg.horizon; ++t) csv += "," + fmt_g17(pred.at(c, t));
    csv += "\n";
  }
  fs::path out(cfg.out_dir);
  write_file(out / "forecast.csv", csv);
  std::cout << "forecast origin " << sample.origin << " written to "
            << (out / "forecast.csv").string() << "\n";
  return kExitOk;
}

int cmd_gradcheck() {
  const GradSuiteResult r = run_gradient_suite(1e-4);
  for (const auto& e : r.entries) {
    std::printf("%-24s max_rel %.3e  %s\n", e.name.c_str(), e.max_rel_error,
                e.pass ? "ok" : "FAIL");
  }
  std::printf("gradient suite: worst %.3e over %zu checks -> %s\n", r.worst, r.entries.size(),
              r.pass ? "pass" : "fail");
  if (!r.pass) {
    emit_error(kExitVerification, "verification", "gradient suite exceeded tolerance 1e-4");
    return kExitVerification;
  }
  return kExitOk;
}

int cmd_scan_bench(RunConfig cfg) {
  write_config_echo(cfg);
  const std::int64_t lanes = 64;
  const std::vector<std::int64_t> lengths = {1, 2, 3, 7, 16, 64, 257, 1024, 4096};

  std::string csv = "length,path,ns_per_step\n";
  Rng rng(cfg.train.seed);
  for (auto len : lengths) {
    std::vector<double> a(static_cast<std::size_t>(len * lanes));
    std::vector<double> b(a.size()), s(a.size());
    for (auto& x : a) x = 0.2 + 0.7 * rng.uniform();
    for (auto& x : b) x = rng.normal();

    auto time_path = [&](auto&& fn) {
      // Warm up once, then time enough repetitions to fill ~20ms.
      fn();
      const std::int64_t reps = std::max<std::int64_t>(1, 1 << 22 >> std::max<int>(1, static_cast<int>(std::log2(static_cast<double>(len * lanes)))));
      const auto t0 = std::chrono::steady_clock::now();
      for (std::int64_t r = 0; r < reps; ++r) fn();
      const auto dt = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count();
      return dt / static_cast<double>(reps * len);
    };
    const double seq_ns = time_path([&] { scan_sequential(a, b, len, lanes, s); });
    const double par_ns = time_path([&] { scan_parallel(a, b, len, lanes, s); });
    csv += std::to_string(len) + ",sequential," + fmt_g17(seq_ns) + "\n";
    csv += std::to_string(len) + ",parallel," + fmt_g17(par_ns) + "\n";
    std::printf("len %5lld  sequential %10.1f ns/step  parallel %10.1f ns/step\n",
                static_cast<long long>(len), seq_ns, par_ns);
  }
  fs::path out(cfg.out_dir);
  write_file(out / "scan_bench.csv", csv);
  return kExitOk;
}

int cmd_ingest(RunConfig cfg) {
  if (cfg.data_path.empty()) throw ConfigError("no dataset given; pass --data or data.path");
  CsvOptions opt;
  opt.time_column = cfg.time_column;
  opt.imputation = cfg.strict_imputation ? Imputation::kStrict : Imputation::kFillForward;
  const TimeSeriesDataset ds = load_csv(cfg.data_path, opt);
  write_config_echo(cfg);

  fs::path out(cfg.out_dir);
  save_dataset_cache((out / "cache").string(), ds);

  std::printf("%s: %lld channels x %lld steps (%s .. %s)\n", cfg.data_path.c_str(),
              static_cast<long long>(ds.channels), static_cast<long long>(ds.steps),
              ds.timestamps.front().c_str(), ds.timestamps.back().c_str());
  std::printf("%-24s %12s %12s %12s %12s\n", "channel", "mean", "std", "min", "max");
  for (std::int64_t c = 0; c < ds.channels; ++c) {
    double sum = 0, mn = ds.at(c, 0), mx = ds.at(c, 0);
    for (std::int64_t t = 0; t < ds.steps; ++t) {
      const double v = ds.at(c, t);
      sum += v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    const double mean = sum / static_cast<double>(ds.steps);
    double sq = 0;
    for (std::int64_t t = 0; t < ds.steps; ++t) {
      const double d = ds.at(c, t) - mean;
      sq += d * d;
    }
    std::printf("%-24s %12.4f %12.4f %12.4f %12.4f\n",
                ds.channel_names[static_cast<std::size_t>(c)].c_str(), mean,
                std::sqrt(sq / static_cast<double>(ds.steps)), mn, mx);
  }
  std::printf("cache written to %s\n", (out / "cache.json").string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mat: hybrid selective-SSM + attention forecaster for multivariate time series"};
  app.require_subcommand(1);

  cli::FlagOverrides flags;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option_function<std::string>(
        "--config", [&](const std::string& v) { flags.config_path = v; },
        "flat dotted-key JSON config file");
    cmd->add_option_function<std::string>(
        "--data", [&](const std::string& v) { flags.data_path = v; }, "dataset CSV path");
    cmd->add_option_function<std::int64_t>(
        "--lookback", [&](std::int64_t v) { flags.lookback = v; }, "look-back window length L");
    cmd->add_option_function<std::int64_t>(
        "--horizon", [&](std::int64_t v) { flags.horizon = v; }, "forecast horizon T");
    cmd->add_option_function<std::int64_t>(
        "--n1", [&](std::int64_t v) { flags.n1 = v; }, "stage-1 embedded width");
    cmd->add_option_function<std::int64_t>(
        "--n2", [&](std::int64_t v) { flags.n2 = v; }, "stage-2 embedded width");
    cmd->add_option_function<std::int64_t>(
        "--dim", [&](std::int64_t v) { flags.dim = v; }, "inner/attention width D");
    cmd->add_option_function<std::int64_t>(
        "--state", [&](std::int64_t v) { flags.state = v; }, "SSM state size N");
    cmd->add_option_function<int>(
        "--heads", [&](int v) { flags.heads = v; }, "attention head count H");
    cmd->add_option_function<double>(
        "--dropout", [&](double v) { flags.dropout = v; }, "embedding dropout probability");
    cmd->add_option_function<std::int64_t>(
        "--epochs", [&](std::int64_t v) { flags.epochs = v; }, "training epochs");
    cmd->add_option_function<std::int64_t>(
        "--batch", [&](std::int64_t v) { flags.batch = v; }, "batch size");
    cmd->add_option_function<double>(
        "--lr", [&](double v) { flags.lr = v; }, "learning rate");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) { flags.seed = v; }, "run seed (MAT_SEED is the fallback)");
    cmd->add_option_function<std::string>(
        "--out", [&](const std::string& v) { flags.out_dir = v; }, "output directory");
    cmd->add_option_function<std::string>(
        "--metrics-space", [&](const std::string& v) { flags.metrics_space = v; },
        "metric space: scaled or raw");
    cmd->add_option_function<int>(
        "--workers", [&](int v) { flags.workers = v; }, "batch workers (default 1)");
    cmd->add_option_function<std::string>(
        "--checkpoint", [&](const std::string& v) { flags.checkpoint = v; }, "checkpoint stem");
    cmd->add_option_function<std::int64_t>(
        "--origin", [&](std::int64_t v) { flags.origin = v; }, "forecast window origin (global step)");
    cmd->add_option_function<std::string>(
        "--split", [&](const std::string& v) { flags.forecast_split = v; },
        "forecast split: train, val or test");
  };

  auto* c_train = app.add_subcommand("train", "train the forecaster and write a checkpoint");
  auto* c_eval = app.add_subcommand("evaluate", "score a checkpoint against the baselines");
  auto* c_forecast = app.add_subcommand("forecast", "emit one (M x T) forecast as CSV");
  auto* c_gradcheck = app.add_subcommand("gradcheck", "finite-difference verification suite");
  auto* c_bench = app.add_subcommand("scan-bench", "time sequential vs parallel selective scan");
  auto* c_ingest = app.add_subcommand("ingest", "parse a CSV, cache it and print a summary");
  for (auto* c : {c_train, c_eval, c_forecast, c_gradcheck, c_bench, c_ingest}) add_common(c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    emit_error(kExitConfig, "config", e.what());
    return kExitConfig;
  }

  try {
    if (c_gradcheck->parsed()) return cmd_gradcheck();
    RunConfig cfg = cli::resolve_config(flags);
    if (c_train->parsed()) return cmd_train(std::move(cfg));
    if (c_eval->parsed()) return cmd_evaluate(std::move(cfg));
    if (c_forecast->parsed()) return cmd_forecast(std::move(cfg));
    if (c_bench->parsed()) return cmd_scan_bench(std::move(cfg));
    if (c_ingest->parsed()) return cmd_ingest(std::move(cfg));
    emit_error(kExitConfig, "config", "no command given");
    return kExitConfig;
  } catch (const ConfigError& e) {
    emit_error(kExitConfig, "config", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    emit_error(kExitData, "data", e.what());
    return kExitData;
  } catch (const NumericError& e) {
    emit_error(kExitNumeric, "numeric", e.what());
    return kExitNumeric;
  } catch (const Error& e) {
    emit_error(kExitNumeric, "contract", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    emit_error(1, "internal", e.what());
    return 1;
  }
}
