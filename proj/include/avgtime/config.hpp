#pragma once

// JSON run configuration. Sections mirror the model/train types:
//
// {
//   "dataset_path": "data/ETTh1.csv",
//   "split": {"mode": "ett-hourly"},               // or {"mode": "ratio", "ratios": [0.7, 0.1, 0.2]}
//   "lookback": 96, "horizon": 96,
//   "model": {"n_transformer_layers": 0, "n_mlp_layers": 0, "d_model": 256, "n_heads": 8,
//             "dropout": 0.4, "channel_independent": true, "revin_affine": true},
//   "train": {"learning_rate": 0.001, "batch_size": 128, "max_epochs": 30, "patience": 5,
//             "seed": 2024, "shuffle": true},
//   "threshold": 0.8,                               // optional; enables channel grouping
//   "ablation_disable_embedding": false,
//   "output_dir": "runs/etth1_96"
// }

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "avgtime/model.hpp"
#include "avgtime/series.hpp"
#include "avgtime/train.hpp"

namespace avgtime {

using Json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string dataset_path;
  SplitSpec split;
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  ModelConfig model;  // n_channels and grouping are filled in from the data
  TrainConfig train;
  std::optional<double> threshold;
  bool ablation_disable_embedding = false;
  std::string output_dir = "runs/default";
};

inline std::string to_string(SplitMode m) {
  switch (m) {
    case SplitMode::ratio: return "ratio";
    case SplitMode::ett_hourly: return "ett-hourly";
    case SplitMode::ett_minutely: return "ett-minutely";
  }
  return "?";
}

namespace detail {

inline void reject_unknown(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const Json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + where + "." + key + " has the wrong type (" + e.what() + ")");
  }
}

inline void read_count(const Json& obj, const char* key, std::size_t& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("config: " + where + "." + key + " must be a non-negative integer");
  }
  out = v.get<std::size_t>();
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  detail::reject_unknown(j, "top level",
                         {"dataset_path", "split", "lookback", "horizon", "model", "train", "threshold",
                          "ablation_disable_embedding", "output_dir"});
  RunConfig c;
  if (!j.contains("dataset_path") || !j.at("dataset_path").is_string()) {
    throw ConfigError("config: dataset_path (string) is required");
  }
  c.dataset_path = j.at("dataset_path").get<std::string>();
  detail::read_count(j, "lookback", c.lookback, "config");
  detail::read_count(j, "horizon", c.horizon, "config");
  if (c.lookback < 1 || c.horizon < 1) throw ConfigError("config: lookback and horizon must be positive");
  detail::read(j, "ablation_disable_embedding", c.ablation_disable_embedding, "config");
  detail::read(j, "output_dir", c.output_dir, "config");
  if (j.contains("threshold") && !j.at("threshold").is_null()) {
    double t = 0.0;
    detail::read(j, "threshold", t, "config");
    if (!(t >= -1.0 && t <= 1.0)) throw ConfigError("config: threshold must lie in [-1, 1]");
    c.threshold = t;
  }

  if (j.contains("split")) {
    const auto& s = j.at("split");
    if (!s.is_object()) throw ConfigError("config: split must be an object");
    detail::reject_unknown(s, "split", {"mode", "ratios"});
    std::string mode = "ratio";
    detail::read(s, "mode", mode, "split");
    if (mode == "ratio") {
      c.split.mode = SplitMode::ratio;
    } else if (mode == "ett-hourly") {
      c.split.mode = SplitMode::ett_hourly;
    } else if (mode == "ett-minutely") {
      c.split.mode = SplitMode::ett_minutely;
    } else {
      throw ConfigError("config: split.mode must be ratio, ett-hourly or ett-minutely, got '" + mode + "'");
    }
    if (s.contains("ratios")) {
      std::vector<double> r;
      detail::read(s, "ratios", r, "split");
      if (r.size() != 3) throw ConfigError("config: split.ratios needs three values");
      for (double v : r) {
        if (!(v > 0.0)) throw ConfigError("config: split.ratios must be positive");
      }
      if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ConfigError("config: split.ratios must sum to 1");
      c.split.train = r[0];
      c.split.val = r[1];
      c.split.test = r[2];
    }
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (!m.is_object()) throw ConfigError("config: model must be an object");
    detail::reject_unknown(m, "model",
                           {"n_transformer_layers", "n_mlp_layers", "d_model", "n_heads", "dropout",
                            "channel_independent", "revin_affine"});
    detail::read_count(m, "n_transformer_layers", c.model.n_transformer_layers, "model");
    detail::read_count(m, "n_mlp_layers", c.model.n_mlp_layers, "model");
    detail::read_count(m, "d_model", c.model.d_model, "model");
    detail::read_count(m, "n_heads", c.model.n_heads, "model");
    detail::read(m, "dropout", c.model.dropout, "model");
    detail::read(m, "channel_independent", c.model.channel_independent, "model");
    detail::read(m, "revin_affine", c.model.revin_affine, "model");
    if (!(c.model.dropout >= 0.0 && c.model.dropout < 1.0)) throw ConfigError("config: model.dropout must lie in [0, 1)");
    if (c.model.n_heads < 1 || c.model.d_model < 1 || c.model.d_model % c.model.n_heads != 0) {
      throw ConfigError("config: model.d_model must be a positive multiple of model.n_heads");
    }
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (!t.is_object()) throw ConfigError("config: train must be an object");
    detail::reject_unknown(t, "train", {"learning_rate", "batch_size", "max_epochs", "patience", "seed", "shuffle"});
    detail::read(t, "learning_rate", c.train.learning_rate, "train");
    detail::read_count(t, "batch_size", c.train.batch_size, "train");
    detail::read_count(t, "max_epochs", c.train.max_epochs, "train");
    detail::read_count(t, "patience", c.train.patience, "train");
    if (t.contains("seed")) {
      if (!t.at("seed").is_number_unsigned() && !t.at("seed").is_number_integer()) {
        throw ConfigError("config: train.seed must be an integer");
      }
      c.train.seed = t.at("seed").get<std::uint64_t>();
    }
    detail::read(t, "shuffle", c.train.shuffle, "train");
    try {
      c.train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  c.model.lookback = c.lookback;
  c.model.horizon = c.horizon;
  c.model.disable_embedding = c.ablation_disable_embedding;
  return c;
}

inline Json to_json(const RunConfig& c) {
  Json j;
  j["dataset_path"] = c.dataset_path;
  Json split{{"mode", to_string(c.split.mode)}};
  if (c.split.mode == SplitMode::ratio) split["ratios"] = {c.split.train, c.split.val, c.split.test};
  j["split"] = split;
  j["lookback"] = c.lookback;
  j["horizon"] = c.horizon;
  j["model"] = {{"n_transformer_layers", c.model.n_transformer_layers},
                {"n_mlp_layers", c.model.n_mlp_layers},
                {"d_model", c.model.d_model},
                {"n_heads", c.model.n_heads},
                {"dropout", c.model.dropout},
                {"channel_independent", c.model.channel_independent},
                {"revin_affine", c.model.revin_affine}};
  j["train"] = {{"learning_rate", c.train.learning_rate}, {"batch_size", c.train.batch_size},
                {"max_epochs", c.train.max_epochs},       {"patience", c.train.patience},
                {"seed", c.train.seed},                   {"shuffle", c.train.shuffle}};
  j["threshold"] = c.threshold ? Json(*c.threshold) : Json(nullptr);
  j["ablation_disable_embedding"] = c.ablation_disable_embedding;
  j["output_dir"] = c.output_dir;
  return j;
}

// Reads a config file. A relative dataset_path that does not exist relative to
// the working directory is resolved against the config file's directory.
inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  RunConfig c = parse_run_config(j);
  namespace fs = std::filesystem;
  fs::path data(c.dataset_path);
  if (data.is_relative() && !fs::exists(data)) {
    auto alt = fs::path(path).parent_path() / data;
    if (fs::exists(alt)) c.dataset_path = alt.string();
  }
  return c;
}

}  // namespace avgtime
