#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "panelkit/instrument.hpp"

using namespace panelkit;

namespace {

DistanceMatrix three_way(double ab, double ac, double bc) {
  return DistanceMatrix::from_pairs({{"A", "B", ab}, {"A", "C", ac}, {"B", "C", bc}});
}

PanelDataset openness(const std::vector<std::string>& ids, const std::vector<int>& years,
                      const std::vector<double>& values) {
  return PanelDataset(ids, years).with_column("kopen", values);
}

double weight_of(const NeighborWeights& w, const std::string& id) {
  for (const auto& [k, v] : w)
    if (k == id) return v;
  return -1.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Weights

TEST(InverseDistanceWeights, TwoNeighborsWorkedExample) {
  auto D = three_way(1.0, 3.0, 2.0);
  auto w = inverse_distance_weights(D, "A");
  ASSERT_EQ(w.size(), 2u);
  EXPECT_NEAR(weight_of(w, "B"), 0.75, 1e-15);
  EXPECT_NEAR(weight_of(w, "C"), 0.25, 1e-15);
  EXPECT_EQ(weight_of(w, "A"), -1.0);
}

TEST(InverseDistanceWeights, EqualDistancesGiveUniformWeights) {
  std::vector<std::tuple<std::string, std::string, double>> pairs;
  const std::vector<std::string> ids{"A", "B", "C", "D", "E"};
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = i + 1; j < ids.size(); ++j) pairs.emplace_back(ids[i], ids[j], 700.0);
  auto w = inverse_distance_weights(DistanceMatrix::from_pairs(pairs), "C");
  ASSERT_EQ(w.size(), 4u);
  for (const auto& [id, v] : w) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(InverseDistanceWeights, InvariantToDistanceUnits) {
  std::mt19937_64 rng(61);
  auto world = fixtures::random_world(rng, 12, 3, 2000);
  for (const auto& id : world.ids) {
    auto base = inverse_distance_weights(world.D, id);
    auto miles = inverse_distance_weights(world.D.scaled(0.621371), id);
    ASSERT_EQ(base.size(), miles.size());
    double total = 0.0;
    for (std::size_t j = 0; j < base.size(); ++j) {
      EXPECT_EQ(base[j].first, miles[j].first);
      EXPECT_NEAR(base[j].second, miles[j].second, 1e-14);
      EXPECT_GT(base[j].second, 0.0);
      total += base[j].second;
    }
    EXPECT_NEAR(total, 1.0, 1e-14);
  }
}

TEST(InverseDistanceWeights, SelfInclusionNeedsADistance) {
  auto D = three_way(1.0, 3.0, 2.0);
  WeightOptions opt;
  opt.include_self = true;
  EXPECT_THROW(inverse_distance_weights(D, "A", opt), ConfigError);
  opt.self_distance_km = 0.5;
  auto w = inverse_distance_weights(D, "A", opt);
  // 1/0.5 : 1/1 : 1/3 = 6 : 3 : 1
  EXPECT_NEAR(weight_of(w, "A"), 0.6, 1e-15);
  EXPECT_NEAR(weight_of(w, "B"), 0.3, 1e-15);
  EXPECT_NEAR(weight_of(w, "C"), 0.1, 1e-15);
}

TEST(InverseDistanceWeights, UnknownTargetIsADataError) {
  EXPECT_THROW(inverse_distance_weights(three_way(1, 2, 3), "Z"), DataError);
}

TEST(DistanceMatrix, RejectsBadPairs) {
  using P = std::vector<std::tuple<std::string, std::string, double>>;
  EXPECT_THROW(DistanceMatrix::from_pairs(P{{"A", "A", 1.0}}), DataError);
  EXPECT_THROW(DistanceMatrix::from_pairs(P{{"A", "B", 0.0}}), DataError);
  EXPECT_THROW(DistanceMatrix::from_pairs(P{{"A", "B", -3.0}}), DataError);
  EXPECT_THROW(DistanceMatrix::from_pairs(P{{"A", "B", 1.0}, {"B", "A", 1.0}}), DataError);
  EXPECT_THROW(DistanceMatrix::from_pairs(P{{"A", "B", 1.0}, {"A", "C", 1.0}}), DataError);
}

TEST(DistanceCsv, ParsesAndRejectsDuplicates) {
  std::istringstream ok("entity_a,entity_b,distance_km\nA,B,1\nA,C,3\nB,C,2\n");
  auto D = read_distance_csv(ok);
  EXPECT_EQ(D.size(), 3u);
  EXPECT_DOUBLE_EQ(D(*D.index("C"), *D.index("A")), 3.0);
  std::istringstream dup("entity_a,entity_b,distance_km\nA,B,1\nB,A,1\nA,C,3\nB,C,2\n");
  EXPECT_THROW(read_distance_csv(dup), DuplicateObservationError);
  std::istringstream bad("entity_a,entity_b,distance_km\nA,B,far\n");
  EXPECT_THROW(read_distance_csv(bad), CellTypeError);
  std::istringstream header("a,b,c\n");
  EXPECT_THROW(read_distance_csv(header), ParseError);
}

// ---------------------------------------------------------------------------
// Neighbor-weighted openness

TEST(NeighborOpenness, WorkedExample) {
  auto D = three_way(1.0, 3.0, 2.0);
  auto K = openness({"A", "B", "C"}, {2000}, {0.9, 0.3, 0.7});
  auto s = neighbor_weighted_openness(K, "kopen", inverse_distance_weights(D, "A"));
  EXPECT_NEAR(s.values[0], 0.4, 1e-15);
  EXPECT_FALSE(s.renormalized[0]);
}

TEST(NeighborOpenness, IdenticalNeighborsGiveTheirCommonValue) {
  std::mt19937_64 rng(62);
  auto world = fixtures::random_world(rng, 9, 4, 2000);
  std::vector<double> flat(world.ids.size() * 4, 0.37);
  auto K = openness(world.ids, world.years, flat);
  for (const auto& id : world.ids) {
    auto s = neighbor_weighted_openness(K, "kopen", inverse_distance_weights(world.D, id));
    for (double v : s.values) EXPECT_NEAR(v, 0.37, 1e-15);
  }
}

TEST(NeighborOpenness, MissingNeighborRenormalizesAndFlags) {
  auto D = three_way(1.0, 3.0, 2.0);
  auto K = openness({"A", "B", "C"}, {2000, 2001}, {0.9, 0.9, 0.3, kMissing, 0.7, 0.7});
  auto s = neighbor_weighted_openness(K, "kopen", inverse_distance_weights(D, "A"));
  EXPECT_NEAR(s.values[0], 0.4, 1e-15);
  EXPECT_FALSE(s.renormalized[0]);
  EXPECT_NEAR(s.values[1], 0.7, 1e-15);
  EXPECT_TRUE(s.renormalized[1]);
}

TEST(NeighborOpenness, MatchesDirectLoops) {
  std::mt19937_64 rng(63);
  auto world = fixtures::random_world(rng, 5, 6, 2000);
  for (std::size_t i = 0; i < 5; ++i) {
    auto s = neighbor_weighted_openness(world.panel, "kopen",
                                        inverse_distance_weights(world.D, world.ids[i]));
    for (std::size_t t = 0; t < 6; ++t) {
      const double want = oracle::brute_force_kbar(world.dist, i, world.K, {t});
      EXPECT_NEAR(s.values[t], want, 1e-14);
    }
  }
}

// ---------------------------------------------------------------------------
// Time averaging and the final instrument

TEST(TimeAverage, WorkedExamples) {
  const std::vector<double> full{0.2, 0.4, 0.6};
  EXPECT_NEAR(time_average(full), 0.4, 1e-15);
  const std::vector<double> gappy{0.2, kMissing, 0.6};
  EXPECT_NEAR(time_average(gappy), 0.4, 1e-15);
  const std::vector<double> none{kMissing, kMissing};
  EXPECT_THROW(time_average(none), DataError);
}

TEST(BuildInstrument, ProductOfRateAndAverage) {
  auto D = three_way(1.0, 3.0, 2.0);
  auto K = openness({"A", "B", "C"}, {2000, 2001}, {0.9, 0.9, 0.3, 0.3, 0.7, 0.7});
  GlobalRateSeries rate{{{2000, 2.5}, {2001, 5.0}}};
  BuildOptions opt;
  opt.first_period = 2000;
  opt.last_period = 2001;
  auto s = build_instrument(D, K, "kopen", rate, opt);
  EXPECT_NEAR(s.kopen_bar.at("A"), 0.4, 1e-15);
  EXPECT_NEAR(s.at(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(s.at(0, 1), 2.0, 1e-14);
}

TEST(BuildInstrument, LinearInRateAndInOpenness) {
  std::mt19937_64 rng(64);
  auto world = fixtures::random_world(rng, 10, 8, 2000);
  BuildOptions opt;
  opt.first_period = 2000;
  opt.last_period = 2007;
  auto base = build_instrument(world.D, world.panel, "kopen", world.rate, opt);
  auto doubled = build_instrument(world.D, world.panel, "kopen", world.rate.scaled(2.0), opt);
  std::vector<double> k3 = world.panel.values("kopen");
  for (auto& v : k3) v *= 3.0;
  auto tripled = build_instrument(world.D, world.panel.with_column("k3", k3), "k3", world.rate, opt);
  for (std::size_t c = 0; c < base.values.size(); ++c) {
    EXPECT_NEAR(doubled.values[c], 2.0 * base.values[c], 1e-12);
    EXPECT_NEAR(tripled.values[c], 3.0 * base.values[c], 1e-12);
  }
}

TEST(BuildInstrument, RatioToRateIsConstantWithinEntity) {
  std::mt19937_64 rng(65);
  auto world = fixtures::random_world(rng, 8, 10, 2000);
  BuildOptions opt;
  opt.first_period = 2000;
  opt.last_period = 2009;
  auto s = build_instrument(world.D, world.panel, "kopen", world.rate, opt);
  for (std::size_t e = 0; e < s.entities.size(); ++e)
    for (std::size_t t = 0; t < s.periods.size(); ++t)
      EXPECT_NEAR(s.at(e, t) / world.rate.at(s.periods[t]), s.kopen_bar.at(s.entities[e]), 1e-14);
}

TEST(BuildInstrument, FullSizedPanelMatchesBruteForce) {
  std::mt19937_64 rng(66);
  auto world = fixtures::random_world(rng, 78, 26, 1990);
  BuildOptions opt;  // window 1991-2015
  auto s = build_instrument(world.D, world.panel, "kopen", world.rate, opt);
  std::vector<std::size_t> window;
  for (std::size_t t = 0; t < world.years.size(); ++t)
    if (world.years[t] >= 1991 && world.years[t] <= 2015) window.push_back(t);
  ASSERT_EQ(window.size(), 25u);
  ASSERT_EQ(s.entities.size(), 78u);
  for (std::size_t i = 0; i < 78; ++i) {
    const double kbar = oracle::brute_force_kbar(world.dist, i, world.K, window);
    EXPECT_NEAR(s.kopen_bar.at(world.ids[i]), kbar, 1e-12);
    for (std::size_t t = 0; t < world.years.size(); ++t)
      EXPECT_NEAR(s.at(i, t), world.rate.at(world.years[t]) * kbar, 1e-12);
  }
  EXPECT_TRUE(s.renormalized_cells.empty());
}

TEST(BuildInstrument, MissingRateYearInsideWindowIsNamed) {
  auto D = three_way(1.0, 3.0, 2.0);
  auto K = openness({"A", "B", "C"}, {2000, 2001}, {0.9, 0.9, 0.3, 0.3, 0.7, 0.7});
  GlobalRateSeries rate{{{2000, 2.5}}};
  BuildOptions opt;
  opt.first_period = 2000;
  opt.last_period = 2001;
  try {
    build_instrument(D, K, "kopen", rate, opt);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("2001"), std::string::npos);
  }
}

TEST(BuildInstrument, RenormalizedCellsAreReported) {
  auto D = three_way(1.0, 3.0, 2.0);
  auto K = openness({"A", "B", "C"}, {2000, 2001}, {0.9, 0.9, 0.3, kMissing, 0.7, 0.7});
  GlobalRateSeries rate{{{2000, 1.0}, {2001, 1.0}}};
  BuildOptions opt;
  opt.first_period = 2000;
  opt.last_period = 2001;
  auto s = build_instrument(D, K, "kopen", rate, opt);
  // A and C both lose neighbor B in 2001
  ASSERT_EQ(s.renormalized_cells.size(), 2u);
  EXPECT_EQ(s.renormalized_cells[0], (std::pair<std::string, int>{"A", 2001}));
  EXPECT_EQ(s.renormalized_cells[1], (std::pair<std::string, int>{"C", 2001}));
  EXPECT_NEAR(s.kopen_bar.at("A"), 0.5 * (0.4 + 0.7), 1e-15);
}

TEST(BuildInstrument, MergeIntoPanelAddsColumn) {
  auto D = three_way(1.0, 3.0, 2.0);
  auto K = openness({"A", "B", "C"}, {2000, 2001}, {0.9, 0.9, 0.3, 0.3, 0.7, 0.7});
  GlobalRateSeries rate{{{2000, 2.5}, {2001, 5.0}}};
  BuildOptions opt;
  opt.first_period = 2000;
  opt.last_period = 2001;
  auto s = build_instrument(D, K, "kopen", rate, opt);
  PanelDataset target({"A", "B", "Q"}, {2000, 2001, 2002});
  auto merged = s.merge_into(target, "z");
  EXPECT_NEAR(merged.at("z", 0, 0), 1.0, 1e-14);
  EXPECT_TRUE(is_missing(merged.at("z", 0, 2)));
  EXPECT_TRUE(is_missing(merged.at("z", 2, 0)));
  EXPECT_THROW(s.merge_into(merged, "z"), ConfigError);
}

TEST(RateCsv, ParsesAndRejectsDuplicates) {
  std::istringstream ok("year,rate\n2000,2.5\n2001,\n2002,3\n");
  auto r = read_rate_csv(ok, "year", "rate");
  EXPECT_EQ(r.rates.size(), 2u);
  EXPECT_THROW(r.at(2001), DataError);
  std::istringstream dup("year,rate\n2000,2.5\n2000,3\n");
  EXPECT_THROW(read_rate_csv(dup, "year", "rate"), DuplicateObservationError);
  std::istringstream nocol("year,r\n2000,1\n");
  EXPECT_THROW(read_rate_csv(nocol, "year", "rate"), ParseError);
}
