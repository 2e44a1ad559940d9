#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "avgtime/commands.hpp"

int main(int argc, char** argv) {
  using namespace avgtime;
  CLI::App app{"AverageTime forecasting toolkit"};
  app.require_subcommand(1);

  std::string config, checkpoint, eval_output, axis, values;
  bool parallel = false;

  auto* train = app.add_subcommand("train", "train a model and write checkpoint, metrics, history");
  train->add_option("-c,--config", config, "run config JSON")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("-c,--config", config, "run config JSON")->required();
  eval->add_option("-k,--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("-o,--output", eval_output, "also write the metrics JSON here");

  auto* cluster = app.add_subcommand("cluster", "compute the channel grouping for the configured threshold");
  cluster->add_option("-c,--config", config, "run config JSON")->required();

  auto* sweep = app.add_subcommand("sweep", "run one training per value of a threshold or lookback axis");
  sweep->add_option("-c,--config", config, "run config JSON")->required();
  sweep->add_option("--axis", axis, "threshold | lookback")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_flag("--parallel", parallel, "run sweep points concurrently");

  auto* ablation = app.add_subcommand("ablation", "compare raw-path-only heads against the averaged model");
  ablation->add_option("-c,--config", config, "run config JSON")->required();

  SynthSpec spec;
  std::string kind = "lagged-copies", synth_output;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset CSV");
  synth->add_option("--kind", kind, "sinusoids | lagged-copies | independent-noise");
  synth->add_option("--channels", spec.n_channels, "channel count");
  synth->add_option("--length", spec.length, "time steps");
  synth->add_option("--noise", spec.noise_std, "additive Gaussian noise std");
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_option("-o,--output", synth_output, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*train) return cmd_train(config, std::cout, std::cerr);
  if (*eval) {
    return cmd_eval(config, checkpoint, eval_output.empty() ? std::nullopt : std::optional(eval_output), std::cout,
                    std::cerr);
  }
  if (*cluster) return cmd_cluster(config, std::cout, std::cerr);
  if (*sweep) return cmd_sweep(config, axis, values, parallel, std::cout, std::cerr);
  if (*ablation) return cmd_ablation(config, std::cout, std::cerr);
  if (*synth) {
    try {
      spec.kind = parse_synth_kind(kind);
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitUsage;
    }
    return cmd_synth(spec, synth_output, std::cerr);
  }
  return kExitUsage;
}
