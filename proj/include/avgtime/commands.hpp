#pragma once

// CLI command bodies. Each returns a process exit code:
// 0 success, 1 runtime failure, 2 usage/config failure.

#include <filesystem>
#include <functional>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "avgtime/pipeline.hpp"
#include "avgtime/synth.hpp"

namespace avgtime {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

inline int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

inline int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const RunConfig run = load_run_config(config_path);
        const auto data = prepare_data(run);
        const auto outcome = run_experiment(run, data);
        write_run_artifacts(run, outcome, run.output_dir);
        out << "test mse " << format_double(outcome.report.mse) << " mae " << format_double(outcome.report.mae)
            << " (epochs " << outcome.report.epochs_run << ", best " << outcome.report.best_epoch << ", params "
            << outcome.parameter_count << ") -> " << run.output_dir << '\n';
        return kExitOk;
      },
      err);
}

inline int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
                    const std::optional<std::string>& output_path, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const RunConfig run = load_run_config(config_path);
        const auto data = prepare_data(run);
        Json result;
        try {
          result = evaluate_checkpoint(run, data, checkpoint_path);
        } catch (const ShapeError& e) {
          throw CheckpointError(e.what());
        }
        const std::string text = result.dump(2) + "\n";
        if (output_path) write_file_atomic(*output_path, text);
        out << text;
        return kExitOk;
      },
      err);
}

inline int cmd_cluster(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const RunConfig run = load_run_config(config_path);
        if (!run.threshold) throw ConfigError("cluster: config has no threshold");
        const auto data = prepare_data(run);
        Json g = grouping_json(build_grouping(data.splits.train, *run.threshold));
        g["config"] = to_json(run);
        const std::string text = g.dump(2) + "\n";
        write_file_atomic(std::filesystem::path(run.output_dir) / "grouping.json", text);
        out << text;
        return kExitOk;
      },
      err);
}

enum class SweepAxis { threshold, lookback };

struct SweepRow {
  std::string value;
  bool ok = false;
  std::string error;
  double mse = 0.0, mae = 0.0, seconds_per_epoch = 0.0;
  std::size_t parameter_count = 0;
  std::optional<std::size_t> group_count;
};

inline std::vector<double> parse_value_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = detail::trim(item);
    if (t.empty()) continue;
    auto v = detail::parse_double(t);
    if (!v) throw ConfigError("sweep: cannot parse value '" + std::string(t) + "'");
    values.push_back(*v);
  }
  return values;
}

inline std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << (axis == SweepAxis::threshold ? "threshold" : "lookback") << ",status,mse,mae,parameter_count,seconds_per_epoch";
  if (axis == SweepAxis::threshold) os << ",group_count";
  os << ",error\n";
  for (const auto& r : rows) {
    os << r.value << ',' << (r.ok ? "ok" : "failed") << ',';
    if (r.ok) {
      os << format_double(r.mse) << ',' << format_double(r.mae) << ',' << r.parameter_count << ','
         << format_double(r.seconds_per_epoch);
    } else {
      os << ",,,";
    }
    if (axis == SweepAxis::threshold) os << ',' << (r.group_count ? std::to_string(*r.group_count) : "");
    std::string msg = r.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    os << ',' << msg << '\n';
  }
  return os.str();
}

// Runs one configuration per value with the base seed. Row failures are
// recorded and do not stop the sweep.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, const std::optional<SeriesMatrix>& series, SweepAxis axis,
                                       const std::vector<double>& values, bool parallel) {
  auto run_row = [&](double value) {
    SweepRow row;
    row.value = axis == SweepAxis::lookback ? std::to_string(static_cast<long long>(value)) : format_double(value);
    try {
      RunConfig run = base;
      if (axis == SweepAxis::threshold) {
        if (!(value >= -1.0 && value <= 1.0)) throw ConfigError("threshold must lie in [-1, 1]");
        run.threshold = value;
      } else {
        if (!(value >= 1.0) || value != std::floor(value)) throw ConfigError("lookback must be a positive integer");
        run.lookback = static_cast<std::size_t>(value);
        run.model.lookback = run.lookback;
      }
      run.output_dir = (std::filesystem::path(base.output_dir) / "sweep" /
                        ((axis == SweepAxis::threshold ? "threshold_" : "lookback_") + row.value))
                           .string();
      const auto data = series ? prepare_data(run, *series) : prepare_data(run);
      const auto o = run_experiment(run, data);
      write_run_artifacts(run, o, run.output_dir);
      row.ok = true;
      row.mse = o.report.mse;
      row.mae = o.report.mae;
      row.parameter_count = o.parameter_count;
      row.seconds_per_epoch = o.report.train_seconds_per_epoch;
      if (o.grouping) row.group_count = o.grouping->grouping.group_count;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    return row;
  };
  std::vector<SweepRow> rows;
  if (parallel) {
    std::vector<std::future<SweepRow>> jobs;
    for (double v : values) jobs.push_back(std::async(std::launch::async, run_row, v));
    for (auto& j : jobs) rows.push_back(j.get());
  } else {
    for (double v : values) rows.push_back(run_row(v));
  }
  return rows;
}

inline int cmd_sweep(const std::string& config_path, const std::string& axis_name, const std::string& values_text,
                     bool parallel, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        SweepAxis axis;
        if (axis_name == "threshold") {
          axis = SweepAxis::threshold;
        } else if (axis_name == "lookback") {
          axis = SweepAxis::lookback;
        } else {
          throw ConfigError("sweep: axis must be threshold or lookback, got '" + axis_name + "'");
        }
        const auto values = parse_value_list(values_text);
        if (values.empty()) throw ConfigError("sweep: empty value list");
        const RunConfig run = load_run_config(config_path);
        if (!std::filesystem::exists(run.dataset_path)) throw ConfigError("dataset file not found: " + run.dataset_path);
        const auto rows = run_sweep(run, std::nullopt, axis, values, parallel);
        const std::string csv = sweep_csv(axis, rows);
        write_file_atomic(std::filesystem::path(run.output_dir) / "sweep.csv", csv);
        out << csv;
        const bool all_failed = std::none_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.ok; });
        return all_failed ? kExitRuntime : kExitOk;
      },
      err);
}

struct AblationResult {
  RunOutcome mlp;      // raw-path heads only
  RunOutcome average;  // full model
  double mse_improvement_pct = 0.0;
  double mae_improvement_pct = 0.0;
};

// Positive improvement means the averaged model has lower error.
inline double improvement_pct(double baseline, double candidate) { return 100.0 * (baseline - candidate) / baseline; }

inline AblationResult run_ablation(const RunConfig& base, const PreparedData& data) {
  RunConfig ablated = base;
  ablated.ablation_disable_embedding = true;
  ablated.model.disable_embedding = true;
  RunConfig full = base;
  full.ablation_disable_embedding = false;
  full.model.disable_embedding = false;
  AblationResult r{run_experiment(ablated, data), run_experiment(full, data)};
  r.mse_improvement_pct = improvement_pct(r.mlp.report.mse, r.average.report.mse);
  r.mae_improvement_pct = improvement_pct(r.mlp.report.mae, r.average.report.mae);
  return r;
}

inline Json ablation_json(const RunConfig& run, const AblationResult& r) {
  auto row = [](const RunOutcome& o) {
    return Json{{"mse", o.report.mse}, {"mae", o.report.mae}, {"best_val_mse", o.report.best_val_mse},
                {"parameter_count", o.parameter_count}};
  };
  return Json{{"config", to_json(run)},
              {"mlp", row(r.mlp)},
              {"average", row(r.average)},
              {"improvement_pct", {{"mse", r.mse_improvement_pct}, {"mae", r.mae_improvement_pct}}}};
}

inline int cmd_ablation(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const RunConfig run = load_run_config(config_path);
        const auto data = prepare_data(run);
        const auto r = run_ablation(run, data);
        const std::filesystem::path dir(run.output_dir);
        std::ostringstream csv;
        csv << "variant,mse,mae\n"
            << "mlp," << format_double(r.mlp.report.mse) << ',' << format_double(r.mlp.report.mae) << '\n'
            << "average," << format_double(r.average.report.mse) << ',' << format_double(r.average.report.mae) << '\n'
            << "improvement_pct," << format_double(r.mse_improvement_pct) << ','
            << format_double(r.mae_improvement_pct) << '\n';
        write_file_atomic(dir / "ablation.csv", csv.str());
        write_file_atomic(dir / "ablation.json", ablation_json(run, r).dump(2) + "\n");
        out << csv.str();
        return kExitOk;
      },
      err);
}

inline int cmd_synth(const SynthSpec& spec, const std::string& output_path, std::ostream& err) {
  return guarded(
      [&] {
        std::ostringstream os;
        write_csv(os, generate(spec));
        write_file_atomic(output_path, os.str());
        return kExitOk;
      },
      err);
}

}  // namespace avgtime
