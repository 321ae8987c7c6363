#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mat/data.hpp"
#include "mat/model.hpp"

namespace mat {

// Raw (non-differentiable) metric helpers over equal-shaped tensors.
double mse_value(const Tensor& pred, const Tensor& target);
double mae_value(const Tensor& pred, const Tensor& target);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

enum class MetricsSpace { kScaled, kRaw };

struct TrainConfig {
  std::int64_t epochs = 100;
  std::int64_t batch_size = 32;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  std::int64_t patience = 0;    // 0 disables early stopping
  double clip_norm = 0.0;       // 0 disables gradient clipping
  MetricsSpace metrics_space = MetricsSpace::kScaled;
  int workers = 1;

  void validate() const;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed ordered parameter list. Moment buffers are allocated on
// the first step and stay aligned with that order; a non-finite gradient
// aborts with a diagnostic naming the parameter.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<std::string>& names, const std::vector<Tensor*>& params,
            const std::vector<std::vector<double>>& grads);
  std::int64_t steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Per-run record: loss curves from training plus evaluation metrics, with
// enough metadata to reproduce the run.
struct MetricsReport {
  std::string dataset;
  std::int64_t horizon = 0;
  std::string model = "mat";
  Metrics metrics;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_mse;     // per epoch (empty without a val split)
  std::uint64_t seed = 0;
  std::string config_json;         // resolved model config snapshot
  double wall_clock_s = 0.0;       // excluded from CSV output by design

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
  std::string loss_curve_csv() const;
};

struct TrainResult {
  ModelParams params;
  MetricsReport report;
  bool aborted = false;
  std::string abort_reason;
};

// Epoch loop with seeded shuffling, mean-MSE objective, optional early
// stopping on validation MSE, optional global-norm clipping. A non-finite
// loss or gradient aborts and the parameters roll back to the last completed
// epoch.
TrainResult train_model(const ModelConfig& mcfg, const ModelParams& initial,
                        const WindowSet& train, const WindowSet* val, const TrainConfig& tcfg,
                        const Scaler* scaler);

// Side-effect-free evaluation over every window of a split. The raw metric
// space undoes the global scaler on predictions and targets first.
Metrics evaluate_forecaster(const ModelConfig& mcfg, const ModelParams& params,
                            const WindowSet& windows, MetricsSpace space, const Scaler* scaler);

// Forecast that repeats each channel's last look-back value across the
// horizon; the training-free reference every model must beat.
Metrics naive_repeat_metrics(const WindowSet& windows, MetricsSpace space, const Scaler* scaler);

// One shared ridge-regularized least-squares map (L+1 -> T, bias included)
// fitted across all channels of the training windows.
class LinearBaseline {
 public:
  static LinearBaseline fit(const WindowSet& train, double ridge = 1e-8);

  Tensor predict(const Tensor& x) const;  // (M, L) -> (M, T)
  Metrics evaluate(const WindowSet& windows, MetricsSpace space, const Scaler* scaler) const;

 private:
  std::vector<double> w_;  // (L+1, T) column-major by target step
  std::int64_t lookback_ = 0;
  std::int64_t horizon_ = 0;
};

}  // namespace mat
