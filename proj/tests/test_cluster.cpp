#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "avgtime/cluster.hpp"
#include "avgtime/synth.hpp"
#include "support/oracles.hpp"

namespace avgtime {
namespace {

using testing_support::lpa_oracle;
using testing_support::spearman_oracle;

SeriesMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  SeriesMatrix s;
  s.channels = rows.size();
  s.steps = rows.front().size();
  for (const auto& r : rows) s.values.insert(s.values.end(), r.begin(), r.end());
  for (std::size_t c = 0; c < s.channels; ++c) s.channel_names.push_back("c" + std::to_string(c));
  return s;
}

TEST(Spearman, MonotoneAndReversed) {
  std::vector<double> x{0.3, 1.1, 2.5, 2.9, 7.0, 8.2};
  std::vector<double> y, z;
  for (double v : x) {
    y.push_back(2 * v + 1);
    z.push_back(-v);
  }
  auto m = spearman_matrix(from_rows({x, y, z}));
  EXPECT_DOUBLE_EQ(m(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(m(0, 2), -1.0);
  EXPECT_DOUBLE_EQ(m(1, 2), -1.0);
}

TEST(Spearman, MatchesOracleOnRandomData) {
  Rng rng(11);
  std::vector<std::vector<double>> rows(5, std::vector<double>(50));
  for (auto& r : rows) {
    for (auto& v : r) v = rng.normal(0.0, 1.0);
  }
  auto m = spearman_matrix(from_rows(rows));
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(m(i, i), 1.0);
    for (std::size_t j = 0; j < 5; ++j) {
      if (i != j) {
        EXPECT_NEAR(m(i, j), spearman_oracle(rows[i], rows[j]), 1e-12);
      }
      EXPECT_EQ(m(i, j), m(j, i));
    }
  }
}

TEST(Spearman, TiesUseAverageRanks) {
  auto r = average_ranks(std::vector<double>{5, 1, 5, 3});
  EXPECT_EQ(r, (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(Spearman, ConstantChannelIsUncorrelated) {
  auto m = spearman_matrix(from_rows({{1, 2, 3, 4}, {7, 7, 7, 7}}));
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_EQ(m(1, 1), 1.0);
}

TEST(Spearman, InvariantUnderMonotoneTransformOfOneChannel) {
  Rng rng(5);
  std::vector<std::vector<double>> rows(3, std::vector<double>(40));
  for (auto& r : rows) {
    for (auto& v : r) v = rng.normal(0.0, 1.0);
  }
  auto before = spearman_matrix(from_rows(rows));
  for (auto& v : rows[1]) v = std::exp(3.0 * v) - 2.0;
  auto after = spearman_matrix(from_rows(rows));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(before.values[i], after.values[i], 1e-15);
}

TEST(Spearman, RejectsSingleStep) { EXPECT_THROW(spearman_matrix(from_rows({{1.0}, {2.0}})), DataError); }

TEST(Threshold, StrictComparison) {
  CorrelationMatrix corr{2, {1, 0.9, 0.9, 1}};
  auto g = threshold_graph(corr, 0.8);
  EXPECT_TRUE(g.edge(0, 1));
  EXPECT_EQ(g.edge_count(), 1u);
  EXPECT_EQ(threshold_graph(corr, 0.9).edge_count(), 0u);
  EXPECT_EQ(threshold_graph(corr, 1.0).edge_count(), 0u);
  EXPECT_THROW(threshold_graph(corr, 1.5), std::invalid_argument);
}

TEST(Threshold, EdgeSetsNestAsThresholdDecreases) {
  Rng rng(8);
  std::vector<std::vector<double>> rows(8, std::vector<double>(60));
  for (auto& r : rows) {
    for (auto& v : r) v = rng.normal(0.0, 1.0);
  }
  auto corr = spearman_matrix(from_rows(rows));
  ChannelGraph prev = threshold_graph(corr, 1.0);
  for (double t = 1.0; t >= -1.0; t -= 0.05) {
    auto g = threshold_graph(corr, t);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_LE(prev.adjacency[i], g.adjacency[i]);
    prev = g;
  }
}

TEST(LabelPropagation, HandTraces) {
  ChannelGraph one_edge(3);
  one_edge.connect(0, 1);
  EXPECT_EQ(label_propagation(one_edge).groups(), (std::vector<std::vector<std::size_t>>{{0, 1}, {2}}));

  ChannelGraph k4(4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) k4.connect(i, j);
  }
  auto g = label_propagation(k4);
  EXPECT_EQ(g.group_count, 1u);
  EXPECT_EQ(g.labels, (std::vector<std::size_t>{0, 0, 0, 0}));

  auto empty = label_propagation(ChannelGraph(5));
  EXPECT_EQ(empty, Grouping::singletons(5));
  EXPECT_THROW(label_propagation(ChannelGraph(2), 0), std::invalid_argument);
}

TEST(LabelPropagation, MatchesOracleOnRandomGraphs) {
  std::mt19937_64 eng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + eng() % 12;
    const double density = std::uniform_real_distribution<double>(0.0, 1.0)(eng);
    ChannelGraph g(n);
    std::vector<std::set<std::size_t>> adj(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (std::uniform_real_distribution<double>(0.0, 1.0)(eng) < density) {
          g.connect(i, j);
          adj[i].insert(j);
          adj[j].insert(i);
        }
      }
    }
    auto got = label_propagation(g).groups();
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, lpa_oracle(adj, 100)) << "trial " << trial;
  }
}

TEST(LabelPropagation, GroupsStayWithinConnectedComponents) {
  std::mt19937_64 eng(3);
  for (int trial = 0; trial < 50; ++trial) {
    ChannelGraph g(10);
    for (int e = 0; e < 8; ++e) g.connect(eng() % 10, eng() % 10);
    std::vector<std::size_t> comp(10);
    std::iota(comp.begin(), comp.end(), std::size_t{0});
    for (bool again = true; again;) {
      again = false;
      for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t j = 0; j < 10; ++j) {
          if (g.edge(i, j) && comp[j] < comp[i]) {
            comp[i] = comp[j];
            again = true;
          }
        }
      }
    }
    auto grouping = label_propagation(g);
    grouping.validate(10);
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t j = 0; j < 10; ++j) {
        if (grouping.labels[i] == grouping.labels[j]) {
          EXPECT_EQ(comp[i], comp[j]);
        }
      }
    }
    EXPECT_EQ(label_propagation(g), grouping);
  }
}

TEST(Grouping, CanonicalLabelsAndValidation) {
  auto g = Grouping::from_labels({7, 3, 7, 9, 3});
  EXPECT_EQ(g.labels, (std::vector<std::size_t>{0, 1, 0, 3, 1}));
  EXPECT_EQ(g.group_count, 3u);
  EXPECT_EQ(g.group_index(), (std::vector<std::size_t>{0, 1, 0, 2, 1}));
  EXPECT_THROW(g.validate(4), std::invalid_argument);
  Grouping bad{{0, 2, 2}, 2};
  EXPECT_THROW(bad.validate(3), std::invalid_argument);
}

TEST(BuildGrouping, IdenticalChannelsPlusNoise) {
  Rng rng(2024);
  std::vector<double> a(1000), noise(1000);
  for (auto& v : a) v = rng.normal(0.0, 1.0);
  for (auto& v : noise) v = rng.normal(0.0, 1.0);
  auto r = build_grouping(from_rows({a, a, noise}), 0.8);
  EXPECT_EQ(r.grouping.groups(), (std::vector<std::vector<std::size_t>>{{0, 1}, {2}}));
  EXPECT_EQ(r.edge_count, 1u);
  EXPECT_EQ(r.group_sizes, (std::vector<std::size_t>{2, 1}));
}

TEST(BuildGrouping, ThresholdLimits) {
  auto s = generate(SynthSpec{SynthKind::independent_noise, 6, 300, 0.0, 4});
  EXPECT_EQ(build_grouping(s, 1.0).grouping.group_count, 6u);
  EXPECT_EQ(build_grouping(s, -1.0).grouping.group_count, 1u);
  EXPECT_EQ(build_grouping(s, -1.0).edge_count, 15u);
}

}  // namespace
}  // namespace avgtime
