#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "panelkit/panel.hpp"

using namespace panelkit;

namespace {

PanelDataset from_csv(const std::string& text) {
  std::istringstream in(text);
  return read_panel_csv(in, "iso", "year");
}

// Test-only inverse of lag-k: value k years later within the entity.
std::vector<double> lead(const PanelDataset& ds, const std::string& col, int k) {
  std::vector<double> out(ds.n_cells(), kMissing);
  for (std::size_t e = 0; e < ds.n_entities(); ++e)
    for (std::size_t t = 0; t < ds.n_periods(); ++t) {
      auto src = ds.period_index(ds.periods()[t] + k);
      if (src) out[ds.cell(e, t)] = ds.values(col)[ds.cell(e, *src)];
    }
  return out;
}

struct WarningCapture {
  std::vector<std::string> messages;
  WarningSink saved;
  WarningCapture() : saved(warning_sink()) {
    warning_sink() = [this](std::string_view m) { messages.emplace_back(m); };
  }
  ~WarningCapture() { warning_sink() = saved; }
};

}  // namespace

TEST(LoadPanelCsv, UnmentionedPairsAreMissing) {
  auto ds = from_csv("iso,year,co2\nARG,1991,5.0\nARG,1992,6.0\nBRA,1991,7.0\n");
  EXPECT_EQ(ds.n_entities(), 2u);
  EXPECT_EQ(ds.n_periods(), 2u);
  EXPECT_EQ(ds.column_names(), std::vector<std::string>{"co2"});
  EXPECT_DOUBLE_EQ(ds.at("co2", 0, 1), 6.0);
  EXPECT_TRUE(is_missing(ds.at("co2", 1, 1)));
  int missing = 0;
  for (double v : ds.values("co2")) missing += is_missing(v);
  EXPECT_EQ(missing, 1);
}

TEST(LoadPanelCsv, DuplicateKeyIsAnError) {
  EXPECT_THROW(from_csv("iso,year,co2\nARG,1991,5\nARG,1991,6\n"), DuplicateObservationError);
}

TEST(LoadPanelCsv, FullSizedLayout) {
  std::ostringstream csv;
  csv << "iso,year,co2,ed\n";
  for (int e = 0; e < 78; ++e)
    for (int y = 1990; y <= 2015; ++y) csv << "C" << e << ',' << y << ',' << e + y << ",\n";
  auto ds = from_csv(csv.str());
  EXPECT_EQ(ds.n_entities(), 78u);
  EXPECT_EQ(ds.n_periods(), 26u);
  EXPECT_TRUE(is_missing(ds.at("ed", 5, 5)));
}

TEST(LoadPanelCsv, ErrorsCarryLocation) {
  try {
    from_csv("iso,year,co2\nARG,1991,5\nARG,1992\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    from_csv("iso,year,co2\nARG,1991,abc\n");
    FAIL();
  } catch (const CellTypeError& e) {
    EXPECT_NE(std::string(e.what()).find("co2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(from_csv("iso,year,co2\nARG,19x1,5\n"), CellTypeError);
  EXPECT_THROW(from_csv("country,year,co2\nARG,1991,5\n"), ParseError);
  EXPECT_THROW(from_csv("iso,year,\"co2\nARG,1991,5\n"), ParseError);
}

TEST(LoadPanelCsv, QuotedFieldsAndCrLf) {
  auto ds = from_csv("iso,year,\"co,2\"\r\n\"C\"\"IV\",1991,1.5\r\n");
  EXPECT_TRUE(ds.has_column("co,2"));
  EXPECT_EQ(ds.entities()[0], "C\"IV");
}

TEST(PanelCsv, WriteReadRoundTripPreservesEveryCell) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution miss(0.2);
  PanelDataset ds({"A", "B", "C"}, {2000, 2001, 2003});
  for (const char* name : {"x", "y"}) {
    std::vector<double> v(ds.n_cells());
    for (auto& c : v) c = miss(rng) ? kMissing : normal(rng) * 1e3;
    ds = ds.with_column(name, v);
  }
  std::stringstream buf;
  write_panel_csv(buf, ds, "iso", "year");
  auto back = read_panel_csv(buf, "iso", "year");
  ASSERT_EQ(back.column_names(), ds.column_names());
  for (const auto& n : ds.column_names())
    for (std::size_t i = 0; i < ds.n_cells(); ++i) {
      const double a = ds.values(n)[i], b = back.values(n)[i];
      if (is_missing(a)) EXPECT_TRUE(is_missing(b));
      else EXPECT_EQ(a, b);  // shortest round-trip text is exact
    }
}

TEST(ApplyTransform, LagShiftsWithinEntity) {
  auto ds = from_csv("iso,year,x\nA,1,3\nA,2,5\nA,3,8\nB,1,1\nB,2,2\nB,3,4\n");
  auto out = apply_transform(ds, {TransformKind::lag, {"x"}, "x_l1", 1});
  const auto& v = out.values("x_l1");
  EXPECT_TRUE(is_missing(v[0]));
  EXPECT_EQ(v[1], 3.0);
  EXPECT_EQ(v[2], 5.0);
  EXPECT_TRUE(is_missing(v[3]));  // B's first period does not borrow from A
  EXPECT_EQ(v[5], 2.0);
}

TEST(ApplyTransform, LogOfIdentityValues) {
  auto ds = from_csv("iso,year,x\nA,1,1\nA,2," + std::to_string(std::exp(1.0)) + "\nA,3," +
                     std::to_string(std::exp(2.0)) + "\n");
  auto out = apply_transform(ds, {TransformKind::log, {"x"}, "lx"});
  EXPECT_NEAR(out.values("lx")[0], 0.0, 1e-12);
  EXPECT_NEAR(out.values("lx")[1], 1.0, 1e-6);
  EXPECT_NEAR(out.values("lx")[2], 2.0, 1e-6);
}

TEST(ApplyTransform, LogOfNonPositiveBecomesMissingWithWarning) {
  WarningCapture cap;
  auto ds = from_csv("iso,year,x\nA,1,0\nA,2,-1\nA,3,2\nA,4,\n");
  auto out = apply_transform(ds, {TransformKind::log, {"x"}, "lx"});
  EXPECT_TRUE(is_missing(out.values("lx")[0]));
  EXPECT_TRUE(is_missing(out.values("lx")[1]));
  EXPECT_NEAR(out.values("lx")[2], std::log(2.0), 1e-15);
  ASSERT_EQ(cap.messages.size(), 1u);
  EXPECT_NE(cap.messages[0].find("2 non-positive"), std::string::npos);
}

TEST(ApplyTransform, SquareMatchesCellwiseRecomputation) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(8.0, 1.0);
  PanelDataset ds({"A", "B", "C", "D"}, {1, 2, 3, 4, 5});
  std::vector<double> y(ds.n_cells());
  for (auto& v : y) v = normal(rng);
  y[3] = kMissing;
  ds = ds.with_column("lgdp", y);
  auto out = apply_transform(ds, {TransformKind::square, {"lgdp"}, "lgdp2"});
  for (std::size_t i = 0; i < ds.n_cells(); ++i) {
    if (i == 3) {
      EXPECT_TRUE(is_missing(out.values("lgdp2")[i]));
      continue;
    }
    const double oracle = ds.values("lgdp")[i] * ds.values("lgdp")[i];
    EXPECT_EQ(out.values("lgdp2")[i], oracle);
  }
  EXPECT_EQ(&out.values("lgdp"), &ds.values("lgdp"));  // source column shared, untouched
}

TEST(ApplyTransform, InteractionAndDifference) {
  auto ds = from_csv("iso,year,a,b\nA,1,2,3\nA,2,4,\nA,3,7,1\n");
  auto out = apply_transform(ds, {TransformKind::interaction, {"a", "b"}, "ab"});
  EXPECT_EQ(out.values("ab")[0], 6.0);
  EXPECT_TRUE(is_missing(out.values("ab")[1]));
  out = apply_transform(out, {TransformKind::first_difference, {"a"}, "da"});
  EXPECT_TRUE(is_missing(out.values("da")[0]));
  EXPECT_EQ(out.values("da")[1], 2.0);
  EXPECT_EQ(out.values("da")[2], 3.0);
}

TEST(ApplyTransform, Errors) {
  auto ds = from_csv("iso,year,x\nA,1,1\nA,2,2\nA,3,3\n");
  EXPECT_THROW(apply_transform(ds, {TransformKind::log, {"nope"}, "y"}), ConfigError);
  EXPECT_THROW(apply_transform(ds, {TransformKind::log, {"x"}, "x"}), ConfigError);
  EXPECT_THROW(apply_transform(ds, {TransformKind::lag, {"x"}, "l3", 3}), ConfigError);
  EXPECT_THROW(apply_transform(ds, {TransformKind::interaction, {"x"}, "xx"}), ConfigError);
}

TEST(ApplyTransform, PropertiesOnRandomPanels) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution miss(0.1);
  for (int trial = 0; trial < 20; ++trial) {
    PanelDataset ds({"A", "B", "C"}, {1990, 1991, 1992, 1993, 1994, 1995});
    std::vector<double> x(ds.n_cells());
    for (auto& v : x) v = miss(rng) ? kMissing : normal(rng);
    ds = ds.with_column("x", x);
    const int k = 1 + trial % 3;
    auto lagged = apply_transform(ds, {TransformKind::lag, {"x"}, "xl", k});
    EXPECT_EQ(lagged.n_entities(), ds.n_entities());
    EXPECT_EQ(lagged.n_periods(), ds.n_periods());
    // lead-k of lag-k restores x wherever the lead lands inside the panel
    auto restored = lead(lagged, "xl", k);
    for (std::size_t e = 0; e < ds.n_entities(); ++e)
      for (std::size_t t = 0; t + static_cast<std::size_t>(k) < ds.n_periods(); ++t) {
        const double a = x[ds.cell(e, t)], b = restored[ds.cell(e, t)];
        if (is_missing(a)) EXPECT_TRUE(is_missing(b));
        else EXPECT_EQ(a, b);
      }
  }
}

TEST(WithinDemean, WorkedExamples) {
  auto ds = from_csv("iso,year,x,c\nA,1,1,4\nA,2,2,4\nA,3,3,4\n");
  auto d = within_demean(ds, {"x", "c"}, {});
  EXPECT_NEAR(d.values(0, 0), -1.0, 1e-15);
  EXPECT_NEAR(d.values(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(d.values(2, 0), 1.0, 1e-15);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(d.values(r, 1), 0.0);
  EXPECT_EQ(d.sample.entity_counts, std::vector<std::size_t>{3});

  auto two = from_csv("iso,year,x\nA,1,1\nA,2,3\nB,1,10\nB,2,14\n");
  auto d2 = within_demean(two, {"x"}, {});
  EXPECT_EQ(d2.values(0, 0), -1.0);
  EXPECT_EQ(d2.values(1, 0), 1.0);
  EXPECT_EQ(d2.values(2, 0), -2.0);
  EXPECT_EQ(d2.values(3, 0), 2.0);
}

TEST(WithinDemean, SingletonEntityIsAnError) {
  auto ds = from_csv("iso,year,x\nA,1,1\nA,2,3\nB,1,10\nB,2,\n");
  EXPECT_THROW(within_demean(ds, {"x"}, {}), DataError);
}

TEST(WithinDemean, MeansZeroAndIdempotent) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 10.0);
  std::bernoulli_distribution miss(0.15);
  PanelDataset ds({"A", "B", "C", "D"}, {1, 2, 3, 4, 5, 6, 7});
  for (const char* name : {"x", "y"}) {
    std::vector<double> v(ds.n_cells());
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = (i % 7 >= 2 && miss(rng)) ? kMissing : 100.0 + normal(rng);
    ds = ds.with_column(name, v);
  }
  auto d = within_demean(ds, {"x", "y"}, {});
  // per-entity means of the demeaned data
  std::vector<Eigen::RowVectorXd> sums(d.sample.n_entities(), Eigen::RowVectorXd::Zero(2));
  for (Eigen::Index r = 0; r < d.values.rows(); ++r) sums[d.sample.entity_of_row[r]] += d.values.row(r);
  for (std::size_t g = 0; g < sums.size(); ++g)
    EXPECT_LT((sums[g] / double(d.sample.entity_counts[g])).cwiseAbs().maxCoeff(), 1e-10);
  Eigen::MatrixXd twice = d.values;
  demean_in_place(twice, d.sample);
  EXPECT_LT((twice - d.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SampleFilter, ListwiseDeletionIsMonotone) {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution miss(0.3);
  PanelDataset ds({"A", "B", "C"}, {1, 2, 3, 4, 5});
  for (const char* name : {"a", "b", "c"}) {
    std::vector<double> v(ds.n_cells());
    for (auto& x : v) x = miss(rng) ? kMissing : 1.0;
    ds = ds.with_column(name, v);
  }
  std::size_t prev = ds.n_cells();
  std::vector<std::string> set;
  for (const char* name : {"a", "b", "c"}) {
    set.push_back(name);
    SampleFilter f;
    f.complete_on = set;
    const auto n = select_sample(ds, f).n_obs();
    EXPECT_LE(n, prev);
    prev = n;
  }
}

TEST(SampleFilter, WindowAllowlistAndGroup) {
  auto ds = from_csv("iso,year,x\nA,1990,1\nA,1991,1\nA,1992,1\nB,1991,1\nB,1992,1\nC,1991,1\nC,1992,1\n");
  SampleFilter f;
  f.first_period = 1991;
  f.entity_groups = {{"A", "low"}, {"B", "high"}, {"C", "low"}};
  f.group = "low";
  auto s = select_sample(ds, f);
  EXPECT_EQ(s.n_obs(), 4u);
  EXPECT_EQ(s.n_entities(), 2u);
  f.group.reset();
  f.entities = std::vector<std::string>{"B"};
  EXPECT_EQ(select_sample(ds, f).n_obs(), 2u);
}

TEST(SampleFilter, SingletonsDroppedWithWarning) {
  WarningCapture cap;
  auto ds = from_csv("iso,year,x\nA,1,1\nA,2,3\nB,1,10\nB,2,\n");
  SampleFilter f;
  f.complete_on = {"x"};
  auto s = select_sample(ds, f, true);
  EXPECT_EQ(s.n_entities(), 1u);
  EXPECT_EQ(s.dropped_singletons, std::vector<std::string>{"B"});
  EXPECT_EQ(cap.messages.size(), 1u);
}

TEST(TimeDummies, DropFirstCoding) {
  auto ds = from_csv("iso,year,x\nARG,1991,1\nARG,1992,1\nARG,1993,1\nBRA,1991,1\nBRA,1993,1\n");
  auto block = build_time_dummies(ds, {});
  EXPECT_EQ(block.base_period, 1991);
  EXPECT_EQ(block.periods, (std::vector<int>{1992, 1993}));
  ASSERT_EQ(block.values.cols(), 2);
  EXPECT_EQ(block.values.row(2), Eigen::RowVector2d(0, 1));  // (ARG, 1993)
  for (Eigen::Index r = 0; r < block.values.rows(); ++r) EXPECT_LE(block.values.row(r).sum(), 1.0);
}

TEST(TimeDummies, ColumnSumsEqualPeriodCounts) {
  std::mt19937_64 rng(13);
  std::bernoulli_distribution miss(0.3);
  PanelDataset ds({"A", "B", "C", "D", "E"}, {1, 2, 3, 4, 5, 6});
  std::vector<double> v(ds.n_cells());
  for (auto& x : v) x = miss(rng) ? kMissing : 1.0;
  ds = ds.with_column("x", v);
  SampleFilter f;
  f.complete_on = {"x"};
  auto s = select_sample(ds, f);
  auto block = time_dummies(ds, s);
  for (std::size_t j = 0; j < block.periods.size(); ++j) {
    const auto t = *ds.period_index(block.periods[j]);
    double count = 0;  // oracle: count non-missing cells in that period
    for (std::size_t e = 0; e < ds.n_entities(); ++e) count += !is_missing(v[ds.cell(e, t)]);
    EXPECT_EQ(block.values.col(static_cast<Eigen::Index>(j)).sum(), count);
  }
}

TEST(TimeDummies, SinglePeriodIsAnError) {
  auto ds = from_csv("iso,year,x\nA,1991,1\nB,1991,2\n");
  EXPECT_THROW(build_time_dummies(ds, {}), DataError);
}
