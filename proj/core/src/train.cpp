#include "mat/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "mat/checkpoint.hpp"

namespace mat {

double mse_value(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse: shapes differ " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  double s = 0.0;
  auto p = pred.values();
  auto t = target.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    s += d * d;
  }
  return s / static_cast<double>(p.size());
}

double mae_value(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mae: shapes differ " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  double s = 0.0;
  auto p = pred.values();
  auto t = target.values();
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || workers < 1) {
    throw ConfigError("train config: epochs, batch size and workers must be positive");
  }
  if (!(lr > 0.0)) throw ConfigError("train config: learning rate must be positive");
  if (patience < 0 || clip_norm < 0.0) {
    throw ConfigError("train config: patience and clip_norm must be nonnegative");
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::step(const std::vector<std::string>& names, const std::vector<Tensor*>& params,
                const std::vector<std::vector<double>>& grads) {
  if (params.size() != grads.size() || params.size() != names.size()) {
    throw ContractError("adam: parameter/gradient list size mismatch");
  }
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params[i]->size()), 0.0);
      v_[i].assign(static_cast<std::size_t>(params[i]->size()), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->values_mut();
    const auto& g = grads[i];
    if (g.size() != theta.size()) {
      throw ContractError("adam: gradient size mismatch for parameter '" + names[i] + "'");
    }
    for (std::size_t j = 0; j < theta.size(); ++j) {
      if (!std::isfinite(g[j])) {
        throw NumericError("adam: non-finite gradient for parameter '" + names[i] + "'");
      }
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double m_hat = m_[i][j] / bc1;
      const double v_hat = v_[i][j] / bc2;
      theta[j] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

namespace {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["dataset"] = dataset;
  j["horizon"] = horizon;
  j["model"] = model;
  j["mse"] = metrics.mse;
  j["mae"] = metrics.mae;
  j["train_loss"] = train_loss;
  j["val_mse"] = val_mse;
  j["seed"] = seed;
  j["wall_clock_s"] = wall_clock_s;
  if (!config_json.empty()) j["config"] = nlohmann::json::parse(config_json);
  return j.dump(2);
}

std::string MetricsReport::csv_header() { return "dataset,horizon,model,mse,mae,seed\n"; }

std::string MetricsReport::csv_row() const {
  std::ostringstream os;
  os << dataset << ',' << horizon << ',' << model << ',' << fmt_g17(metrics.mse) << ','
     << fmt_g17(metrics.mae) << ',' << seed << '\n';
  return os.str();
}

std::string MetricsReport::loss_curve_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_mse\n";
  for (std::size_t e = 0; e < train_loss.size(); ++e) {
    os << e << ',' << fmt_g17(train_loss[e]) << ',';
    if (e < val_mse.size()) os << fmt_g17(val_mse[e]);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  Rng r(a ^ (b * 0x9e3779b97f4a7c15ULL) ^ (c * 0xbf58476d1ce4e5b9ULL));
  return r.next_u64();
}

struct FlatParams {
  std::vector<std::string> names;
  std::vector<Tensor*> tensors;
};

FlatParams flatten(ModelParams& params) {
  FlatParams fp;
  visit_params(params, [&](const std::string& name, Tensor& t) {
    fp.names.push_back(name);
    fp.tensors.push_back(&t);
  });
  return fp;
}

struct SampleGrads {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;  // aligned with visit order
};

// Forward + backward for one window on its own tape. The per-sample dropout
// stream depends only on (seed, epoch, window index), so results do not
// depend on batch composition or worker count.
SampleGrads sample_gradients(const ModelConfig& mcfg, const ModelParams& params,
                             const WindowSample& sample, std::uint64_t seed, std::uint64_t epoch,
                             std::uint64_t window_index) {
  Tape tape;
  ModelParams bound = bind_params(tape, params);
  Rng rng(mix_seed(seed, epoch, window_index));
  Tensor x = tape.leaf(sample.x, /*requires_grad=*/false);
  Tensor pred = model_forward(x, bound, mcfg, DropoutMode::kTrain, rng);
  Tensor loss = mse(pred, sample.y);

  SampleGrads out;
  out.loss = loss.value();
  GradientMap gm = tape.backward(loss);
  visit_params(bound, [&](const std::string&, Tensor& t) {
    Tensor g = gm.grad(t);
    out.grads.emplace_back(g.values().begin(), g.values().end());
  });
  return out;
}

}  // namespace

Metrics evaluate_forecaster(const ModelConfig& mcfg, const ModelParams& params,
                            const WindowSet& windows, MetricsSpace space, const Scaler* scaler) {
  if (space == MetricsSpace::kRaw && scaler == nullptr) {
    throw ConfigError("evaluate: raw metric space requires the fitted scaler");
  }
  double sq = 0.0, ab = 0.0;
  std::int64_t count = 0;
  Rng rng_unused(0);
  for (std::int64_t i = 0; i < windows.size(); ++i) {
    WindowSample s = windows.get(i);
    Tensor pred = model_forward(s.x, params, mcfg, DropoutMode::kEval, rng_unused);
    Tensor target = s.y;
    if (space == MetricsSpace::kRaw) {
      pred = scaler->invert(pred);
      target = scaler->invert(target);
    }
    auto p = pred.values();
    auto t = target.values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double d = p[j] - t[j];
      sq += d * d;
      ab += std::abs(d);
    }
    count += static_cast<std::int64_t>(p.size());
  }
  return Metrics{sq / static_cast<double>(count), ab / static_cast<double>(count)};
}

TrainResult train_model(const ModelConfig& mcfg, const ModelParams& initial,
                        const WindowSet& train, const WindowSet* val, const TrainConfig& tcfg,
                        const Scaler* scaler) {
  tcfg.validate();
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  result.params = initial;
  result.report.horizon = mcfg.horizon;
  result.report.seed = tcfg.seed;
  result.report.config_json = model_config_to_json(mcfg);

  FlatParams fp = flatten(result.params);
  Adam adam(AdamConfig{tcfg.lr, 0.9, 0.999, 1e-8});

  ModelParams last_good = result.params;
  ModelParams best = result.params;
  double best_val = std::numeric_limits<double>::infinity();
  std::int64_t epochs_since_best = 0;

  for (std::int64_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    Rng epoch_rng(mix_seed(tcfg.seed, 1, static_cast<std::uint64_t>(epoch)));
    auto batches = batch_indices(train.size(), tcfg.batch_size, /*shuffle=*/true, epoch_rng);

    double epoch_loss_sum = 0.0;
    std::int64_t epoch_samples = 0;
    bool failed = false;
    std::string failure;

    for (const auto& batch : batches) {
      const auto bsz = static_cast<std::int64_t>(batch.size());
      std::vector<SampleGrads> per_sample(batch.size());

      auto worker = [&](std::size_t w, std::size_t stride) {
        for (std::size_t i = w; i < batch.size(); i += stride) {
          per_sample[i] = sample_gradients(mcfg, result.params, train.get(batch[i]), tcfg.seed,
                                           static_cast<std::uint64_t>(epoch),
                                           static_cast<std::uint64_t>(batch[i]));
        }
      };
      if (tcfg.workers <= 1 || batch.size() == 1) {
        worker(0, 1);
      } else {
        const auto nw = std::min<std::size_t>(static_cast<std::size_t>(tcfg.workers), batch.size());
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < nw; ++w) threads.emplace_back(worker, w, nw);
        for (auto& th : threads) th.join();
      }

      // Fixed index-ordered reduction keeps results deterministic for any
      // worker count.
      std::vector<std::vector<double>> grads(fp.tensors.size());
      for (std::size_t p = 0; p < fp.tensors.size(); ++p) {
        grads[p].assign(static_cast<std::size_t>(fp.tensors[p]->size()), 0.0);
      }
      double batch_loss = 0.0;
      const double inv_b = 1.0 / static_cast<double>(bsz);
      for (const auto& sg : per_sample) {
        batch_loss += sg.loss;
        for (std::size_t p = 0; p < grads.size(); ++p) {
          for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += sg.grads[p][j] * inv_b;
        }
      }
      batch_loss *= inv_b;

      if (!std::isfinite(batch_loss)) {
        failed = true;
        failure = "non-finite training loss in epoch " + std::to_string(epoch);
        break;
      }

      if (tcfg.clip_norm > 0.0) {
        double norm_sq = 0.0;
        for (const auto& g : grads) {
          for (double x : g) norm_sq += x * x;
        }
        const double norm = std::sqrt(norm_sq);
        if (norm > tcfg.clip_norm) {
          const double f = tcfg.clip_norm / norm;
          for (auto& g : grads) {
            for (double& x : g) x *= f;
          }
        }
      }

      try {
        adam.step(fp.names, fp.tensors, grads);
      } catch (const NumericError& e) {
        failed = true;
        failure = e.what();
        break;
      }

      epoch_loss_sum += batch_loss * static_cast<double>(bsz);
      epoch_samples += bsz;
    }

    if (failed) {
      result.params = last_good;
      result.aborted = true;
      result.abort_reason = failure;
      break;
    }

    result.report.train_loss.push_back(epoch_loss_sum / static_cast<double>(epoch_samples));
    if (val != nullptr) {
      const Metrics vm =
          evaluate_forecaster(mcfg, result.params, *val, tcfg.metrics_space, scaler);
      result.report.val_mse.push_back(vm.mse);
      if (vm.mse < best_val) {
        best_val = vm.mse;
        best = result.params;
        epochs_since_best = 0;
      } else {
        ++epochs_since_best;
      }
      if (tcfg.patience > 0 && epochs_since_best >= tcfg.patience) {
        result.params = best;  // early stop restores the best-validation state
        last_good = best;
        break;
      }
    }
    last_good = result.params;
  }

  result.report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

Metrics naive_repeat_metrics(const WindowSet& windows, MetricsSpace space, const Scaler* scaler) {
  if (space == MetricsSpace::kRaw && scaler == nullptr) {
    throw ConfigError("naive baseline: raw metric space requires the fitted scaler");
  }
  double sq = 0.0, ab = 0.0;
  std::int64_t count = 0;
  const auto lb = windows.lookback();
  const auto hz = windows.horizon();
  for (std::int64_t i = 0; i < windows.size(); ++i) {
    WindowSample s = windows.get(i);
    const auto m = s.x.rows();
    std::vector<double> pv(static_cast<std::size_t>(m * hz));
    for (std::int64_t c = 0; c < m; ++c) {
      const double lastv = s.x.at(c, lb - 1);
      for (std::int64_t t = 0; t < hz; ++t) pv[static_cast<std::size_t>(c * hz + t)] = lastv;
    }
    Tensor pred({m, hz}, std::move(pv));
    Tensor target = s.y;
    if (space == MetricsSpace::kRaw) {
      pred = scaler->invert(pred);
      target = scaler->invert(target);
    }
    auto p = pred.values();
    auto t = target.values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double d = p[j] - t[j];
      sq += d * d;
      ab += std::abs(d);
    }
    count += static_cast<std::int64_t>(p.size());
  }
  return Metrics{sq / static_cast<double>(count), ab / static_cast<double>(count)};
}

namespace {

// Dense SPD solve via Cholesky; dimensions here are tiny (L+1).
void cholesky_solve_in_place(std::vector<double>& a, std::int64_t n, std::vector<double>& b,
                             std::int64_t ncols) {
  for (std::int64_t j = 0; j < n; ++j) {
    double d = a[static_cast<std::size_t>(j * n + j)];
    for (std::int64_t k = 0; k < j; ++k) {
      const double l = a[static_cast<std::size_t>(j * n + k)];
      d -= l * l;
    }
    if (d <= 0.0) throw NumericError("cholesky: matrix is not positive definite");
    const double dj = std::sqrt(d);
    a[static_cast<std::size_t>(j * n + j)] = dj;
    for (std::int64_t i = j + 1; i < n; ++i) {
      double s = a[static_cast<std::size_t>(i * n + j)];
      for (std::int64_t k = 0; k < j; ++k) {
        s -= a[static_cast<std::size_t>(i * n + k)] * a[static_cast<std::size_t>(j * n + k)];
      }
      a[static_cast<std::size_t>(i * n + j)] = s / dj;
    }
  }
  // Forward then back substitution per right-hand side (b is n x ncols).
  for (std::int64_t col = 0; col < ncols; ++col) {
    for (std::int64_t i = 0; i < n; ++i) {
      double s = b[static_cast<std::size_t>(i * ncols + col)];
      for (std::int64_t k = 0; k < i; ++k) {
        s -= a[static_cast<std::size_t>(i * n + k)] * b[static_cast<std::size_t>(k * ncols + col)];
      }
      b[static_cast<std::size_t>(i * ncols + col)] = s / a[static_cast<std::size_t>(i * n + i)];
    }
    for (std::int64_t i = n - 1; i >= 0; --i) {
      double s = b[static_cast<std::size_t>(i * ncols + col)];
      for (std::int64_t k = i + 1; k < n; ++k) {
        s -= a[static_cast<std::size_t>(k * n + i)] * b[static_cast<std::size_t>(k * ncols + col)];
      }
      b[static_cast<std::size_t>(i * ncols + col)] = s / a[static_cast<std::size_t>(i * n + i)];
    }
  }
}

}  // namespace

LinearBaseline LinearBaseline::fit(const WindowSet& train, double ridge) {
  LinearBaseline lb;
  lb.lookback_ = train.lookback();
  lb.horizon_ = train.horizon();
  const auto f = lb.lookback_ + 1;  // bias feature appended

  // Gram accumulation over all (window, channel) rows.
  std::vector<double> gram(static_cast<std::size_t>(f * f), 0.0);
  std::vector<double> rhs(static_cast<std::size_t>(f * lb.horizon_), 0.0);
  std::vector<double> row(static_cast<std::size_t>(f), 0.0);
  for (std::int64_t i = 0; i < train.size(); ++i) {
    WindowSample s = train.get(i);
    for (std::int64_t c = 0; c < s.x.rows(); ++c) {
      for (std::int64_t j = 0; j < lb.lookback_; ++j) row[static_cast<std::size_t>(j)] = s.x.at(c, j);
      row[static_cast<std::size_t>(lb.lookback_)] = 1.0;
      for (std::int64_t a = 0; a < f; ++a) {
        const double ra = row[static_cast<std::size_t>(a)];
        if (ra == 0.0) continue;
        for (std::int64_t b = 0; b < f; ++b) {
          gram[static_cast<std::size_t>(a * f + b)] += ra * row[static_cast<std::size_t>(b)];
        }
        for (std::int64_t t = 0; t < lb.horizon_; ++t) {
          rhs[static_cast<std::size_t>(a * lb.horizon_ + t)] += ra * s.y.at(c, t);
        }
      }
    }
  }

  // Scale-aware ridge keeps the solve stable without visibly biasing it.
  double trace = 0.0;
  for (std::int64_t a = 0; a < f; ++a) trace += gram[static_cast<std::size_t>(a * f + a)];
  const double lambda = ridge * (trace / static_cast<double>(f)) + 1e-12;
  for (std::int64_t a = 0; a < f; ++a) gram[static_cast<std::size_t>(a * f + a)] += lambda;

  cholesky_solve_in_place(gram, f, rhs, lb.horizon_);
  lb.w_ = std::move(rhs);
  return lb;
}

Tensor LinearBaseline::predict(const Tensor& x) const {
  if (x.cols() != lookback_) {
    throw DimensionError("linear baseline: input " + shape_str(x.shape()) +
                         " does not match lookback " + std::to_string(lookback_));
  }
  const auto m = x.rows();
  std::vector<double> out(static_cast<std::size_t>(m * horizon_), 0.0);
  for (std::int64_t c = 0; c < m; ++c) {
    for (std::int64_t t = 0; t < horizon_; ++t) {
      double s = w_[static_cast<std::size_t>(lookback_ * horizon_ + t)];  // bias
      for (std::int64_t j = 0; j < lookback_; ++j) {
        s += x.at(c, j) * w_[static_cast<std::size_t>(j * horizon_ + t)];
      }
      out[static_cast<std::size_t>(c * horizon_ + t)] = s;
    }
  }
  return Tensor({m, horizon_}, std::move(out));
}

Metrics LinearBaseline::evaluate(const WindowSet& windows, MetricsSpace space,
                                 const Scaler* scaler) const {
  if (space == MetricsSpace::kRaw && scaler == nullptr) {
    throw ConfigError("linear baseline: raw metric space requires the fitted scaler");
  }
  double sq = 0.0, ab = 0.0;
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < windows.size(); ++i) {
    WindowSample s = windows.get(i);
    Tensor pred = predict(s.x);
    Tensor target = s.y;
    if (space == MetricsSpace::kRaw) {
      pred = scaler->invert(pred);
      target = scaler->invert(target);
    }
    auto p = pred.values();
    auto t = target.values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double d = p[j] - t[j];
      sq += d * d;
      ab += std::abs(d);
    }
    count += static_cast<std::int64_t>(p.size());
  }
  return Metrics{sq / static_cast<double>(count), ab / static_cast<double>(count)};
}

}  // namespace mat
