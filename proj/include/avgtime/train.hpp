#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "avgtime/model.hpp"
#include "avgtime/series.hpp"

namespace avgtime {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::uint64_t seed = 2024;
  bool shuffle = true;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct MetricsReport {
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> per_horizon_mse;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  double train_seconds_per_epoch = 0.0;
  std::vector<EpochRecord> history;
};

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(double learning_rate) : lr_(learning_rate) {}

  // Leaves without a gradient buffer are treated as having zero gradient.
  void step(const std::vector<std::pair<std::string, Tensor>>& named) {
    if (first_.empty()) {
      for (const auto& [name, t] : named) {
        first_.emplace_back(t.size(), 0.0);
        second_.emplace_back(t.size(), 0.0);
      }
    }
    if (first_.size() != named.size()) throw std::logic_error("adam: parameter set changed between steps");
    for (std::size_t k = 0; k < named.size(); ++k) {
      const auto& t = named[k].second;
      if (!t.has_grad()) continue;
      for (double g : t.grad()) {
        if (!std::isfinite(g)) throw TrainingError("adam: non-finite gradient in parameter " + named[k].first);
      }
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < named.size(); ++k) {
      Tensor t = named[k].second;
      auto values = t.mutable_data();
      auto grad = t.grad();
      const bool has = t.has_grad();
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = has ? grad[i] : 0.0;
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
        values[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      }
    }
  }

  std::size_t steps() const { return steps_; }

 private:
  double lr_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> first_, second_;
};

// Stops once validation loss has gone `patience` consecutive epochs without a
// strict improvement on the best value seen.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when `val_loss` is a new best.
  bool observe(std::size_t epoch, double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EvalResult {
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> per_horizon_mse;
  std::size_t windows = 0;
};

// Error accumulation over (window, channel, horizon step) triples.
class ErrorAccumulator {
 public:
  explicit ErrorAccumulator(std::size_t horizon) : per_step_(horizon, 0.0) {}

  void add(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) throw ShapeError("evaluate: prediction and target shapes differ");
    const std::size_t h = per_step_.size();
    auto p = pred.data();
    auto t = target.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double e = p[i] - t[i];
      per_step_[i % h] += e * e;
      abs_ += std::abs(e);
    }
    count_ += p.size();
    windows_ += pred.dim(0);
  }

  EvalResult result() const {
    if (count_ == 0) throw std::invalid_argument("evaluate: empty split");
    EvalResult r;
    const double per_step_count = static_cast<double>(count_ / per_step_.size());
    double sq = 0.0;
    for (double s : per_step_) {
      sq += s;
      r.per_horizon_mse.push_back(s / per_step_count);
    }
    r.mse = sq / static_cast<double>(count_);
    r.mae = abs_ / static_cast<double>(count_);
    r.windows = windows_;
    return r;
  }

 private:
  std::vector<double> per_step_;
  double abs_ = 0.0;
  std::size_t count_ = 0;
  std::size_t windows_ = 0;
};

// Deterministic evaluation (dropout off, no graph recorded).
inline EvalResult evaluate(const ModelParams& params, const ModelConfig& cfg, const SeriesMatrix& split,
                           std::span<const WindowIndex> windows, std::size_t batch_size = 256) {
  if (windows.empty()) throw std::invalid_argument("evaluate: empty split (no windows)");
  NoGradGuard no_grad;
  Rng unused(0);
  ErrorAccumulator acc(cfg.horizon);
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, windows.size() - start);
    auto batch = gather_batch(split, windows.subspan(start, n), cfg.lookback, cfg.horizon);
    acc.add(forward(batch.inputs, params, cfg, unused, /*training=*/false), batch.targets);
  }
  return acc.result();
}

inline void snapshot(const ModelParams& params, std::vector<std::vector<double>>& out) {
  out.clear();
  for (const auto& t : params.parameters()) out.emplace_back(t.data().begin(), t.data().end());
}

inline void restore(const ModelParams& params, const std::vector<std::vector<double>>& saved) {
  auto ts = params.parameters();
  for (std::size_t k = 0; k < ts.size(); ++k) std::copy(saved[k].begin(), saved[k].end(), ts[k].mutable_data().begin());
}

struct TrainResult {
  ModelParams params;  // best-validation parameters
  MetricsReport report;
};

// Mini-batch Adam on MSE. Returns parameters from the epoch with the best
// validation MSE; `report` carries history and the validation summary (test
// metrics are filled in by the caller).
inline TrainResult train(ModelParams params, const ModelConfig& cfg, const SeriesMatrix& train_split,
                         const SeriesMatrix& val_split, const TrainConfig& tc) {
  tc.validate();
  const auto train_windows = make_windows(train_split, cfg.lookback, cfg.horizon);
  const auto val_windows = make_windows(val_split, cfg.lookback, cfg.horizon);
  if (train_windows.empty() || val_windows.empty()) throw TrainingError("train: each split needs at least one window");

  Rng rng(tc.seed);
  Adam adam(tc.learning_rate);
  EarlyStopping stopper(tc.patience);
  const auto named = params.named_parameters();
  std::vector<std::vector<double>> best;
  snapshot(params, best);

  MetricsReport report;
  std::vector<WindowIndex> order = train_windows;
  double total_seconds = 0.0;
  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (tc.shuffle) std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batch_index) {
      const std::size_t n = std::min(tc.batch_size, order.size() - start);
      auto batch = gather_batch(train_split, std::span(order).subspan(start, n), cfg.lookback, cfg.horizon);
      for (auto& [name, t] : named) Tensor(t).zero_grad();
      Tensor loss = mse(forward(batch.inputs, params, cfg, rng, /*training=*/true), batch.targets);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      backward(loss);
      adam.step(named);
      loss_sum += value * static_cast<double>(n);
    }
    const double val_loss = evaluate(params, cfg, val_split, val_windows).mse;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    total_seconds += seconds;
    report.history.push_back({epoch, loss_sum / static_cast<double>(order.size()), val_loss, seconds});
    report.epochs_run = epoch;
    if (stopper.observe(epoch, val_loss)) snapshot(params, best);
    if (stopper.should_stop()) break;
  }
  restore(params, best);
  report.best_epoch = stopper.best_epoch();
  report.best_val_mse = stopper.best();
  report.train_seconds_per_epoch = total_seconds / static_cast<double>(report.epochs_run);
  return {std::move(params), std::move(report)};
}

}  // namespace avgtime
