#pragma once

// Channel grouping: Spearman rank correlation on the training split, strict
// threshold binarization, then deterministic label propagation.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "avgtime/series.hpp"

namespace avgtime {

struct CorrelationMatrix {
  std::size_t size = 0;
  std::vector<double> values;  // row-major size x size

  double operator()(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

struct ChannelGraph {
  std::size_t size = 0;
  std::vector<char> adjacency;  // row-major, symmetric, zero diagonal

  explicit ChannelGraph(std::size_t n = 0) : size(n), adjacency(n * n, 0) {}

  bool edge(std::size_t i, std::size_t j) const { return adjacency[i * size + j] != 0; }
  void connect(std::size_t i, std::size_t j) {
    if (i == j) return;
    adjacency[i * size + j] = adjacency[j * size + i] = 1;
  }
  std::size_t edge_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = i + 1; j < size; ++j) n += edge(i, j);
    }
    return n;
  }
};

// Partition of channels. labels[c] is the smallest channel index in c's group.
struct Grouping {
  std::vector<std::size_t> labels;
  std::size_t group_count = 0;

  static Grouping from_labels(std::vector<std::size_t> raw) {
    // Canonicalize: every member takes the minimum index sharing its raw label.
    std::map<std::size_t, std::size_t> first_member;
    for (std::size_t c = 0; c < raw.size(); ++c) first_member.try_emplace(raw[c], c);
    Grouping g;
    g.labels.resize(raw.size());
    for (std::size_t c = 0; c < raw.size(); ++c) g.labels[c] = first_member.at(raw[c]);
    g.group_count = first_member.size();
    return g;
  }

  static Grouping singletons(std::size_t channels) {
    std::vector<std::size_t> l(channels);
    std::iota(l.begin(), l.end(), std::size_t{0});
    return from_labels(std::move(l));
  }

  std::size_t channels() const { return labels.size(); }

  // Groups ordered by their minimum member; members ascending.
  std::vector<std::vector<std::size_t>> groups() const {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> slot(labels.size(), labels.size());
    for (std::size_t c = 0; c < labels.size(); ++c) {
      if (slot[labels[c]] == labels.size()) {
        slot[labels[c]] = out.size();
        out.emplace_back();
      }
      out[slot[labels[c]]].push_back(c);
    }
    return out;
  }

  // Dense 0..group_count-1 index per channel, following groups() order.
  std::vector<std::size_t> group_index() const {
    std::vector<std::size_t> index(labels.size());
    std::size_t g = 0;
    for (const auto& members : groups()) {
      for (auto c : members) index[c] = g;
      ++g;
    }
    return index;
  }

  void validate(std::size_t expected_channels) const {
    if (labels.size() != expected_channels) {
      throw std::invalid_argument("grouping covers " + std::to_string(labels.size()) + " channels, expected " +
                                  std::to_string(expected_channels));
    }
    for (std::size_t c = 0; c < labels.size(); ++c) {
      if (labels[c] > c || labels[labels[c]] != labels[c]) {
        throw std::invalid_argument("grouping label for channel " + std::to_string(c) + " is not canonical");
      }
    }
  }

  bool operator==(const Grouping&) const = default;
};

// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Pearson correlation of per-channel rank vectors over the T samples.
inline CorrelationMatrix spearman_matrix(const SeriesMatrix& train) {
  if (train.steps < 2) throw DataError("spearman_matrix needs at least two time steps");
  const std::size_t c = train.channels, n = train.steps;
  std::vector<std::vector<double>> centered(c);
  std::vector<double> norms(c);
  for (std::size_t i = 0; i < c; ++i) {
    auto r = average_ranks(train.channel(i));
    const double mu = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (auto& v : r) {
      v -= mu;
      ss += v * v;
    }
    centered[i] = std::move(r);
    norms[i] = std::sqrt(ss);
  }
  CorrelationMatrix out{c, std::vector<double>(c * c, 0.0)};
  for (std::size_t i = 0; i < c; ++i) {
    out.values[i * c + i] = 1.0;
    for (std::size_t j = i + 1; j < c; ++j) {
      double v = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        double dot = 0.0;
        for (std::size_t t = 0; t < n; ++t) dot += centered[i][t] * centered[j][t];
        v = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      }
      out.values[i * c + j] = out.values[j * c + i] = v;
    }
  }
  return out;
}

// Edge (i, j), i != j, iff corr(i, j) > threshold.
inline ChannelGraph threshold_graph(const CorrelationMatrix& corr, double threshold) {
  if (!(threshold >= -1.0 && threshold <= 1.0)) {
    throw std::invalid_argument("threshold must lie in [-1, 1], got " + std::to_string(threshold));
  }
  ChannelGraph g(corr.size);
  for (std::size_t i = 0; i < corr.size; ++i) {
    for (std::size_t j = i + 1; j < corr.size; ++j) {
      if (corr(i, j) > threshold) g.connect(i, j);
    }
  }
  return g;
}

inline constexpr std::size_t kDefaultLabelPropagationIters = 100;

// Asynchronous sweeps in ascending channel order. Each channel takes the most
// frequent label among its neighbours (smallest label on ties) and keeps its
// own label when isolated. Stops at a fixed point or after max_iters sweeps.
inline Grouping label_propagation(const ChannelGraph& graph, std::size_t max_iters = kDefaultLabelPropagationIters) {
  if (max_iters < 1) throw std::invalid_argument("label_propagation needs max_iters >= 1");
  const std::size_t n = graph.size;
  std::vector<std::size_t> labels(n);
  std::iota(labels.begin(), labels.end(), std::size_t{0});
  std::vector<std::size_t> votes(n, 0);
  for (std::size_t sweep = 0; sweep < max_iters; ++sweep) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(votes.begin(), votes.end(), 0);
      bool any = false;
      for (std::size_t j = 0; j < n; ++j) {
        if (graph.edge(i, j)) {
          ++votes[labels[j]];
          any = true;
        }
      }
      if (!any) continue;
      const auto best = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
      if (best != labels[i]) {
        labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return Grouping::from_labels(std::move(labels));
}

struct GroupingReport {
  double threshold = 0.0;
  Grouping grouping;
  std::size_t edge_count = 0;
  std::vector<std::size_t> group_sizes;
};

inline GroupingReport build_grouping(const SeriesMatrix& train, double threshold,
                                     std::size_t max_iters = kDefaultLabelPropagationIters) {
  auto graph = threshold_graph(spearman_matrix(train), threshold);
  GroupingReport r;
  r.threshold = threshold;
  r.grouping = label_propagation(graph, max_iters);
  r.edge_count = graph.edge_count();
  for (const auto& g : r.grouping.groups()) r.group_sizes.push_back(g.size());
  return r;
}

}  // namespace avgtime
