#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "avgtime/series.hpp"

namespace avgtime {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("avgtime_series_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" + std::to_string(counter()++))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path file(const std::string& name, const std::string& content) const {
    auto p = path_ / name;
    std::ofstream(p) << content;
    return p;
  }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  fs::path path_;
};

SeriesMatrix ramp(std::size_t channels, std::size_t steps) {
  SeriesMatrix s;
  s.channels = channels;
  s.steps = steps;
  s.values.resize(channels * steps);
  for (std::size_t c = 0; c < channels; ++c) {
    s.channel_names.push_back("c" + std::to_string(c));
    for (std::size_t t = 0; t < steps; ++t) s.at(c, t) = static_cast<double>(c * 1000 + t);
  }
  return s;
}

TEST(LoadCsv, DropsDateColumnAndKeepsChannelOrder) {
  TempDir dir;
  auto p = dir.file("small.csv", "date,a,b\n2020-01-01,1,10\n2020-01-02,2,20\n2020-01-03,3,30\n2020-01-04,4,40\n2020-01-05,5,50\n");
  auto s = load_csv(p.string());
  EXPECT_EQ(s.channels, 2u);
  EXPECT_EQ(s.steps, 5u);
  EXPECT_EQ(s.channel_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(s.at(1, 4), 50.0);
  EXPECT_EQ(s.at(0, 0), 1.0);
}

TEST(LoadCsv, WithoutDateColumnAllColumnsAreChannels) {
  TempDir dir;
  auto s = load_csv(dir.file("nodate.csv", "x,y,z\n1,2,3\n4,5,6\n").string());
  EXPECT_EQ(s.channels, 3u);
  EXPECT_EQ(s.steps, 2u);
}

TEST(LoadCsv, NonNumericCellNamesRowAndColumn) {
  TempDir dir;
  auto p = dir.file("bad.csv", "date,a,b\n1,1,2\n2,3,oops\n");
  try {
    load_csv(p.string());
    FAIL();
  } catch (const DataError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 3"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, EmptyAndMissingFilesFail) {
  TempDir dir;
  EXPECT_THROW(load_csv(dir.file("empty.csv", "").string()), DataError);
  EXPECT_THROW(load_csv(dir.file("header.csv", "date,a\n").string()), DataError);
  EXPECT_THROW(load_csv("/nonexistent/file.csv"), DataError);
}

TEST(LoadCsv, WriteCsvRoundTrip) {
  TempDir dir;
  auto s = ramp(3, 7);
  s.at(2, 3) = 0.1 + 0.2;  // shortest round-trip formatting must preserve this
  std::ostringstream os;
  write_csv(os, s);
  auto back = load_csv(dir.file("rt.csv", os.str()).string());
  EXPECT_EQ(back.values, s.values);
  EXPECT_EQ(back.channel_names, s.channel_names);
}

TEST(Split, RatioArithmetic) {
  auto b = split_bounds(100, SplitSpec{});
  EXPECT_EQ(b.train_end, 70u);
  EXPECT_EQ(b.val_end - b.train_end, 10u);
  EXPECT_EQ(b.test_end - b.val_end, 20u);
}

TEST(Split, EttHourlyBorders) {
  auto s = ramp(1, 17420);
  auto sp = split(s, SplitSpec{SplitMode::ett_hourly}, 96, 96);
  EXPECT_EQ(sp.train.steps, 8640u);
  EXPECT_EQ(sp.val.steps, 2880u);
  EXPECT_EQ(sp.test.steps, 2880u);
  EXPECT_LE(8640u + 2880u + 2880u, 17420u);
  // Chronological and contiguous.
  EXPECT_EQ(sp.val.at(0, 0), 8640.0);
  EXPECT_EQ(sp.test.at(0, 0), 11520.0);
}

TEST(Split, EttMinutelyBorders) {
  auto b = split_bounds(69680, SplitSpec{SplitMode::ett_minutely});
  EXPECT_EQ(b.train_end, 34560u);
  EXPECT_EQ(b.val_end - b.train_end, 11520u);
  EXPECT_EQ(b.test_end - b.val_end, 11520u);
}

TEST(Split, DegenerateRatiosRejectedNamingSplit) {
  auto s = ramp(1, 1000);
  try {
    split(s, SplitSpec{SplitMode::ratio, 1.0, 0.0, 0.0}, 4, 4);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("val"), std::string::npos);
  }
  EXPECT_THROW(split(ramp(1, 100), SplitSpec{}, 96, 96), DataError);
  EXPECT_THROW(split(ramp(1, 100), SplitSpec{SplitMode::ett_hourly}, 4, 4), DataError);
}

TEST(Scaler, TwoPointChannel) {
  SeriesMatrix s = ramp(1, 2);
  s.at(0, 0) = 1;
  s.at(0, 1) = 3;
  auto sc = Scaler::fit(s);
  EXPECT_DOUBLE_EQ(sc.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(sc.std[0], 1.0);
  auto t = sc.transform(s);
  EXPECT_DOUBLE_EQ(t.at(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(t.at(0, 1), 1.0);
}

TEST(Scaler, ConstantChannelMapsToZero) {
  SeriesMatrix s = ramp(1, 3);
  for (auto& v : s.values) v = 5.0;
  auto t = Scaler::fit(s).transform(s);
  for (double v : t.values) EXPECT_EQ(v, 0.0);
}

TEST(Scaler, TrainSplitHasZeroMeanAndRoundTrips) {
  Rng rng(4);
  SeriesMatrix s = ramp(4, 300);
  for (auto& v : s.values) v = rng.normal(3.0, 7.0);
  auto sc = Scaler::fit(s);
  auto t = sc.transform(s);
  for (std::size_t c = 0; c < 4; ++c) {
    double mu = 0.0;
    for (double v : t.channel(c)) mu += v;
    EXPECT_LT(std::abs(mu / 300.0), 1e-9);
  }
  auto back = sc.inverse_transform(t);
  for (std::size_t i = 0; i < s.values.size(); ++i) EXPECT_NEAR(back.values[i], s.values[i], 1e-9);
}

TEST(Windows, Counts) {
  EXPECT_EQ(window_count(200, 96, 96), 9u);
  EXPECT_EQ(window_count(191, 96, 96), 0u);
  EXPECT_EQ(window_count(192, 96, 96), 1u);
  EXPECT_EQ(window_count(20, 3, 2, 4), 4u);
  EXPECT_THROW(window_count(10, 0, 1), std::invalid_argument);
}

TEST(Windows, SingleWindowCoversWholeSplit) {
  auto s = ramp(2, 192);
  auto w = make_windows(s, 96, 96);
  ASSERT_EQ(w.size(), 1u);
  auto batch = gather_batch(s, w, 96, 96);
  EXPECT_EQ(batch.inputs.shape(), (Shape{1, 2, 96}));
  EXPECT_EQ(batch.targets.shape(), (Shape{1, 2, 96}));
  EXPECT_EQ(batch.inputs[0], 0.0);
  EXPECT_EQ(batch.targets[95], 191.0);
  EXPECT_EQ(batch.targets[96], 1096.0);  // channel 1 target starts at t = 96
}

TEST(Windows, LayoutFollowsStride) {
  auto s = ramp(1, 30);
  auto w = make_windows(s, 5, 3, 4);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(w[i].start, i * 4);
  auto batch = gather_batch(s, w, 5, 3);
  EXPECT_EQ(batch.inputs[5 * 2], 8.0);    // window 2 input begins at t = 8
  EXPECT_EQ(batch.targets[3 * 2], 13.0);  // and its target at t = 13
}

TEST(Windows, SplitsNeverShareTimeIndices) {
  auto s = ramp(1, 1000);
  auto sp = split(s, SplitSpec{}, 24, 12);
  std::set<double> seen;
  for (const SeriesMatrix* part : {&sp.train, &sp.val, &sp.test}) {
    std::set<double> mine;
    for (const auto& w : make_windows(*part, 24, 12)) {
      for (std::size_t t = w.start; t < w.start + 36; ++t) mine.insert(part->at(0, t));
    }
    for (double t : mine) EXPECT_FALSE(seen.count(t));
    seen.insert(mine.begin(), mine.end());
  }
}

}  // namespace
}  // namespace avgtime
