#pragma once

// End-to-end runs: load -> split -> standardize -> (group) -> train -> test,
// plus artifact writers shared by the CLI commands.

#include <charconv>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>

#include "avgtime/checkpoint.hpp"
#include "avgtime/cluster.hpp"
#include "avgtime/config.hpp"
#include "avgtime/model.hpp"
#include "avgtime/series.hpp"
#include "avgtime/train.hpp"

namespace avgtime {

struct PreparedData {
  Splits splits;  // standardized with training statistics
  Scaler scaler;
  std::size_t channels = 0;
};

inline PreparedData prepare_data(const RunConfig& run, const SeriesMatrix& series) {
  series.validate();
  auto raw = split(series, run.split, run.lookback, run.horizon);
  PreparedData d;
  d.scaler = Scaler::fit(raw.train);
  d.splits = {d.scaler.transform(raw.train), d.scaler.transform(raw.val), d.scaler.transform(raw.test), raw.bounds};
  d.channels = series.channels;
  return d;
}

inline PreparedData prepare_data(const RunConfig& run) {
  if (!std::filesystem::exists(run.dataset_path)) throw ConfigError("dataset file not found: " + run.dataset_path);
  return prepare_data(run, load_csv(run.dataset_path));
}

// Model configuration for a run on `data`; computes the channel grouping from
// the (standardized) training split when a threshold is configured.
inline ModelConfig resolve_model_config(const RunConfig& run, const PreparedData& data,
                                        std::optional<GroupingReport>* grouping_out = nullptr) {
  ModelConfig m = run.model;
  m.n_channels = data.channels;
  m.lookback = run.lookback;
  m.horizon = run.horizon;
  m.disable_embedding = run.ablation_disable_embedding;
  m.grouping.reset();
  if (run.threshold) {
    auto report = build_grouping(data.splits.train, *run.threshold);
    m.grouping = report.grouping;
    if (grouping_out) *grouping_out = std::move(report);
  }
  m.validate();
  return m;
}

inline std::uint64_t init_seed(std::uint64_t train_seed) { return train_seed ^ 0x9E3779B97F4A7C15ULL; }

struct RunOutcome {
  ModelConfig model;
  ModelParams params;
  MetricsReport report;  // mse/mae/per_horizon_mse are test-split metrics
  std::optional<GroupingReport> grouping;
  std::size_t parameter_count = 0;
};

inline RunOutcome run_experiment(const RunConfig& run, const PreparedData& data) {
  RunOutcome out;
  out.model = resolve_model_config(run, data, &out.grouping);
  Rng init(init_seed(run.train.seed));
  auto params = init_params(out.model, init);
  out.parameter_count = parameter_count(params);
  auto trained = train(std::move(params), out.model, data.splits.train, data.splits.val, run.train);
  out.params = std::move(trained.params);
  out.report = std::move(trained.report);
  const auto test_windows = make_windows(data.splits.test, run.lookback, run.horizon);
  const auto test = evaluate(out.params, out.model, data.splits.test, test_windows);
  out.report.mse = test.mse;
  out.report.mae = test.mae;
  out.report.per_horizon_mse = test.per_horizon_mse;
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts.

inline Json grouping_json(const GroupingReport& g) {
  Json groups = Json::array();
  for (const auto& members : g.grouping.groups()) groups.push_back(members);
  return Json{{"threshold", g.threshold}, {"groups", groups}, {"edge_count", g.edge_count}};
}

inline Json test_metrics_json(const EvalResult& r) {
  return Json{{"mse", r.mse}, {"mae", r.mae}, {"per_horizon_mse", r.per_horizon_mse}, {"windows", r.windows}};
}

// Deterministic content only; wall-clock timing goes to history.csv and timing.json.
inline Json metrics_json(const RunConfig& run, const RunOutcome& o) {
  Json history = Json::array();
  for (const auto& e : o.report.history) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  Json j;
  j["config"] = to_json(run);
  j["test"] = {{"mse", o.report.mse}, {"mae", o.report.mae}, {"per_horizon_mse", o.report.per_horizon_mse}};
  j["best_val_mse"] = o.report.best_val_mse;
  j["epochs_run"] = o.report.epochs_run;
  j["best_epoch"] = o.report.best_epoch;
  j["parameter_count"] = o.parameter_count;
  j["head_sets"] = o.model.head_sets();
  j["history"] = history;
  return j;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string history_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,seconds\n";
  for (const auto& e : r.history) {
    os << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
       << format_double(e.seconds) << '\n';
  }
  return os.str();
}

// Checkpoint config echo: run config plus the resolved grouping labels.
inline Json checkpoint_echo(const RunConfig& run, const ModelConfig& model) {
  Json j = to_json(run);
  j["n_channels"] = model.n_channels;
  if (model.grouping) j["grouping_labels"] = model.grouping->labels;
  return j;
}

inline constexpr const char* kCheckpointFile = "checkpoint.bin";

inline void write_run_artifacts(const RunConfig& run, const RunOutcome& o, const std::filesystem::path& dir) {
  save_checkpoint(dir / kCheckpointFile, o.params, checkpoint_echo(run, o.model));
  write_file_atomic(dir / "metrics.json", metrics_json(run, o).dump(2) + "\n");
  write_file_atomic(dir / "history.csv", history_csv(o.report));
  Json timing{{"epochs_run", o.report.epochs_run}, {"train_seconds_per_epoch", o.report.train_seconds_per_epoch}};
  write_file_atomic(dir / "timing.json", timing.dump(2) + "\n");
  if (o.grouping) {
    Json g = grouping_json(*o.grouping);
    g["config"] = to_json(run);
    write_file_atomic(dir / "grouping.json", g.dump(2) + "\n");
  }
}

// Test-split metrics for a saved checkpoint under `run`'s data and model shape.
inline Json evaluate_checkpoint(const RunConfig& run, const PreparedData& data, const std::filesystem::path& ckpt) {
  const ModelConfig model = resolve_model_config(run, data);
  Rng init(init_seed(run.train.seed));
  auto params = init_params(model, init);
  apply_checkpoint(params, load_checkpoint(ckpt));
  const auto windows = make_windows(data.splits.test, run.lookback, run.horizon);
  const auto r = evaluate(params, model, data.splits.test, windows);
  return Json{{"config", to_json(run)}, {"test", {{"mse", r.mse}, {"mae", r.mae}, {"per_horizon_mse", r.per_horizon_mse}}}};
}

}  // namespace avgtime
