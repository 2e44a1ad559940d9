#pragma once

// Multivariate series container, CSV loading, chronological splits,
// train-statistics standardization and sliding windows.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "avgtime/tensor.hpp"

namespace avgtime {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// C x T values, channel-major: value(c, t) = values[c * T + t].
struct SeriesMatrix {
  std::size_t channels = 0;
  std::size_t steps = 0;
  std::vector<double> values;
  std::vector<std::string> channel_names;
  std::string frequency;
  std::string source_path;

  double& at(std::size_t c, std::size_t t) { return values[c * steps + t]; }
  double at(std::size_t c, std::size_t t) const { return values[c * steps + t]; }
  std::span<const double> channel(std::size_t c) const { return {values.data() + c * steps, steps}; }

  // Contiguous time range [begin, end) over all channels.
  SeriesMatrix range(std::size_t begin, std::size_t end) const {
    SeriesMatrix out;
    out.channels = channels;
    out.steps = end - begin;
    out.channel_names = channel_names;
    out.frequency = frequency;
    out.source_path = source_path;
    out.values.resize(out.channels * out.steps);
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy(values.begin() + static_cast<std::ptrdiff_t>(c * steps + begin),
                values.begin() + static_cast<std::ptrdiff_t>(c * steps + end),
                out.values.begin() + static_cast<std::ptrdiff_t>(c * out.steps));
    }
    return out;
  }

  void validate() const {
    if (channels < 1 || steps < 1) throw DataError("series must have at least one channel and one step");
    if (values.size() != channels * steps) throw DataError("series value count does not match C x T");
    if (channel_names.size() != channels) throw DataError("series channel name count does not match C");
    for (double v : values) {
      if (!std::isfinite(v)) throw DataError("series contains non-finite values");
    }
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline std::optional<double> parse_double(std::string_view cell) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

// Reads a comma-separated file with one header row. A leading column named
// "date" (any case) is treated as a timestamp and dropped.
inline SeriesMatrix load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw DataError("empty dataset file: " + path);
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM

  auto header = detail::split_commas(line);
  std::string first(header.front());
  std::transform(first.begin(), first.end(), first.begin(), [](unsigned char c) { return std::tolower(c); });
  const std::size_t skip = first == "date" ? 1 : 0;
  if (header.size() <= skip) throw DataError("no numeric columns in " + path);

  SeriesMatrix out;
  out.source_path = path;
  out.channels = header.size() - skip;
  for (std::size_t i = skip; i < header.size(); ++i) out.channel_names.emplace_back(header[i]);

  std::vector<double> row_major;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    auto cells = detail::split_commas(line);
    if (cells.size() != header.size()) {
      throw DataError(path + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t i = skip; i < cells.size(); ++i) {
      auto v = detail::parse_double(cells[i]);
      if (!v || !std::isfinite(*v)) {
        throw DataError(path + ": non-numeric value '" + std::string(cells[i]) + "' at row " + std::to_string(row) +
                        ", column " + std::to_string(i + 1) + " (" + std::string(header[i]) + ")");
      }
      row_major.push_back(*v);
    }
  }
  if (row == 0) throw DataError("dataset has a header but no data rows: " + path);

  out.steps = row;
  out.values.resize(out.channels * out.steps);
  for (std::size_t t = 0; t < out.steps; ++t) {
    for (std::size_t c = 0; c < out.channels; ++c) out.at(c, t) = row_major[t * out.channels + c];
  }
  return out;
}

// Writes the same schema load_csv reads (with a synthetic "date" index column
// when `with_index` is set).
inline void write_csv(std::ostream& os, const SeriesMatrix& s, bool with_index = true) {
  if (with_index) os << "date";
  for (std::size_t c = 0; c < s.channels; ++c) os << (with_index || c ? "," : "") << s.channel_names[c];
  os << '\n';
  char buf[32];
  for (std::size_t t = 0; t < s.steps; ++t) {
    if (with_index) os << t;
    for (std::size_t c = 0; c < s.channels; ++c) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), s.at(c, t));
      os << (with_index || c ? "," : "") << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Chronological splits.

enum class SplitMode { ratio, ett_hourly, ett_minutely };

struct SplitSpec {
  SplitMode mode = SplitMode::ratio;
  double train = 0.7, val = 0.1, test = 0.2;
};

struct SplitBounds {
  std::size_t train_end = 0, val_end = 0, test_end = 0;
};

struct Splits {
  SeriesMatrix train, val, test;
  SplitBounds bounds;
};

// ETT borders: 12/4/4 months of 30 days.
inline constexpr std::size_t kEttHourlyTrain = 12 * 30 * 24;
inline constexpr std::size_t kEttHourlyEval = 4 * 30 * 24;
inline constexpr std::size_t kEttMinutelyTrain = kEttHourlyTrain * 4;
inline constexpr std::size_t kEttMinutelyEval = kEttHourlyEval * 4;

inline SplitBounds split_bounds(std::size_t steps, const SplitSpec& spec) {
  switch (spec.mode) {
    case SplitMode::ett_hourly:
      return {kEttHourlyTrain, kEttHourlyTrain + kEttHourlyEval, kEttHourlyTrain + 2 * kEttHourlyEval};
    case SplitMode::ett_minutely:
      return {kEttMinutelyTrain, kEttMinutelyTrain + kEttMinutelyEval, kEttMinutelyTrain + 2 * kEttMinutelyEval};
    case SplitMode::ratio: {
      const double ratios[] = {spec.train, spec.val, spec.test};
      for (double r : ratios) {
        if (!(r >= 0.0)) throw DataError("split ratios must be non-negative");
      }
      if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) throw DataError("split ratios must sum to 1");
      // Train and test are floored; validation takes the remainder.
      const auto n = static_cast<double>(steps);
      const auto train = static_cast<std::size_t>(std::floor(spec.train * n + 1e-9));
      const auto test = static_cast<std::size_t>(std::floor(spec.test * n + 1e-9));
      const std::size_t val = steps - std::min(steps, train + test);
      return {train, train + val, train + val + test};
    }
  }
  throw DataError("unknown split mode");
}

// Non-overlapping contiguous train/val/test ranges; each must fit one window.
inline Splits split(const SeriesMatrix& series, const SplitSpec& spec, std::size_t lookback, std::size_t horizon) {
  const auto b = split_bounds(series.steps, spec);
  if (b.test_end > series.steps) {
    throw DataError("split needs " + std::to_string(b.test_end) + " steps, series has " + std::to_string(series.steps));
  }
  const std::size_t need = lookback + horizon;
  const std::pair<const char*, std::size_t> lengths[] = {
      {"train", b.train_end}, {"val", b.val_end - b.train_end}, {"test", b.test_end - b.val_end}};
  for (auto [name, len] : lengths) {
    if (len < need) {
      throw DataError(std::string(name) + " split too short: " + std::to_string(len) + " steps, need " +
                      std::to_string(need) + " for one window");
    }
  }
  return {series.range(0, b.train_end), series.range(b.train_end, b.val_end), series.range(b.val_end, b.test_end), b};
}

// ---------------------------------------------------------------------------
// Standardization with training statistics.

inline constexpr double kScalerStdFloor = 1e-8;

struct Scaler {
  std::vector<double> mean, std;

  static Scaler fit(const SeriesMatrix& train) {
    Scaler s;
    s.mean.resize(train.channels);
    s.std.resize(train.channels);
    for (std::size_t c = 0; c < train.channels; ++c) {
      auto ch = train.channel(c);
      double mu = 0.0;
      for (double v : ch) mu += v;
      mu /= static_cast<double>(ch.size());
      double var = 0.0;
      for (double v : ch) var += (v - mu) * (v - mu);
      var /= static_cast<double>(ch.size());
      s.mean[c] = mu;
      s.std[c] = std::max(std::sqrt(var), kScalerStdFloor);
    }
    return s;
  }

  SeriesMatrix transform(const SeriesMatrix& x) const {
    check(x);
    SeriesMatrix out = x;
    for (std::size_t c = 0; c < x.channels; ++c) {
      for (std::size_t t = 0; t < x.steps; ++t) out.at(c, t) = (x.at(c, t) - mean[c]) / std[c];
    }
    return out;
  }

  SeriesMatrix inverse_transform(const SeriesMatrix& x) const {
    check(x);
    SeriesMatrix out = x;
    for (std::size_t c = 0; c < x.channels; ++c) {
      for (std::size_t t = 0; t < x.steps; ++t) out.at(c, t) = x.at(c, t) * std[c] + mean[c];
    }
    return out;
  }

 private:
  void check(const SeriesMatrix& x) const {
    if (x.channels != mean.size()) throw DataError("scaler fitted on a different channel count");
  }
};

// ---------------------------------------------------------------------------
// Sliding windows.

struct WindowIndex {
  std::size_t start;  // input covers [start, start+L), target [start+L, start+L+H)
};

inline std::size_t window_count(std::size_t steps, std::size_t lookback, std::size_t horizon, std::size_t stride = 1) {
  if (lookback < 1 || horizon < 1 || stride < 1) throw std::invalid_argument("window extents and stride must be >= 1");
  if (steps < lookback + horizon) return 0;
  return (steps - lookback - horizon) / stride + 1;
}

inline std::vector<WindowIndex> make_windows(const SeriesMatrix& split, std::size_t lookback, std::size_t horizon,
                                             std::size_t stride = 1) {
  std::vector<WindowIndex> out(window_count(split.steps, lookback, horizon, stride));
  for (std::size_t i = 0; i < out.size(); ++i) out[i].start = i * stride;
  return out;
}

// Batch of windows as tensors: inputs B x C x L, targets B x C x H.
struct WindowBatch {
  Tensor inputs;
  Tensor targets;
  std::vector<std::size_t> window_starts;
};

inline WindowBatch gather_batch(const SeriesMatrix& split, std::span<const WindowIndex> windows, std::size_t lookback,
                                std::size_t horizon) {
  const std::size_t b = windows.size(), c = split.channels;
  std::vector<double> in(b * c * lookback), tgt(b * c * horizon);
  WindowBatch out;
  out.window_starts.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t s = windows[i].start;
    if (s + lookback + horizon > split.steps) throw DataError("window extends past the end of its split");
    out.window_starts.push_back(s);
    for (std::size_t ch = 0; ch < c; ++ch) {
      auto series = split.channel(ch);
      std::copy_n(series.begin() + static_cast<std::ptrdiff_t>(s), lookback, in.begin() + static_cast<std::ptrdiff_t>((i * c + ch) * lookback));
      std::copy_n(series.begin() + static_cast<std::ptrdiff_t>(s + lookback), horizon,
                  tgt.begin() + static_cast<std::ptrdiff_t>((i * c + ch) * horizon));
    }
  }
  out.inputs = Tensor({b, c, lookback}, std::move(in));
  out.targets = Tensor({b, c, horizon}, std::move(tgt));
  return out;
}

}  // namespace avgtime
