#include <gtest/gtest.h>

#include <sstream>

#include "panelkit/csv.hpp"
#include "panelkit/reporting.hpp"

using namespace panelkit;

namespace {

EstimationResult fake_result(std::vector<std::string> names, std::vector<double> coef,
                             std::vector<double> se, std::size_t dof = 1000) {
  EstimationResult r;
  r.names = std::move(names);
  const auto k = static_cast<Eigen::Index>(coef.size());
  r.coef = Eigen::Map<const Eigen::VectorXd>(coef.data(), k);
  r.vcov = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) r.vcov(i, i) = se[static_cast<std::size_t>(i)] * se[static_cast<std::size_t>(i)];
  r.dof_residual = dof;
  r.n_obs = 1950;
  r.n_entities = 78;
  r.r_squared_within = 0.4213;
  return r;
}

TableLayout three_columns() {
  TableLayout L;
  auto fe = fake_result({"kopen", "lgdp"}, {0.0021, 0.31}, {0.0009, 0.2});
  auto iv = fake_result({"kopen", "lgdp"}, {0.005, -0.12}, {0.001, 0.09});
  DiagnosticsBundle d;
  d.first_stage_f = {48.25, 1, 1000, 1e-9};
  d.underid_lm = {30.1, 1, 4e-8};
  d.ar_tests.push_back({0.0, 18.4, 1, 1000, 0.00002});
  ArConfidenceSet s;
  s.intervals.push_back({0.0031, 0.0072});
  d.ar_set = s;
  iv.diagnostics = d;
  auto fs = fake_result({"zshift", "lgdp"}, {0.62, 0.05}, {0.09, 0.04});
  L.columns = {{"FE", fe}, {"IV", iv}, {"First stage", fs}};
  return L;
}

}  // namespace

TEST(Stars, WorkedBoundaries) {
  EXPECT_EQ(significance_stars(0.004), "***");
  EXPECT_EQ(significance_stars(0.03), "**");
  EXPECT_EQ(significance_stars(0.07), "*");
  EXPECT_EQ(significance_stars(0.2), "");
}

TEST(Stars, ThresholdsAreStrict) {
  EXPECT_EQ(significance_stars(0.009), "***");
  EXPECT_EQ(significance_stars(0.01), "**");
  EXPECT_EQ(significance_stars(0.049), "**");
  EXPECT_EQ(significance_stars(0.05), "*");
  EXPECT_EQ(significance_stars(0.099), "*");
  EXPECT_EQ(significance_stars(0.1), "");
  EXPECT_EQ(significance_stars(std::numeric_limits<double>::quiet_NaN()), "");
}

TEST(Stars, CustomLevels) {
  std::vector<StarLevel> levels{{0.001, "+++"}, {0.05, "+"}};
  EXPECT_EQ(significance_stars(0.0005, levels), "+++");
  EXPECT_EQ(significance_stars(0.01, levels), "+");
  auto L = three_columns();
  L.stars = {{0.05, "*"}, {0.01, "**"}};
  EXPECT_THROW(format_table(L, TableStyle::text), ConfigError);
}

TEST(FixedFormat, NegativeZeroIsNormalized) {
  EXPECT_EQ(fixed(-0.0001, 3), "0.000");
  EXPECT_EQ(fixed(-0.0006, 3), "-0.001");
  EXPECT_EQ(fixed(std::numeric_limits<double>::quiet_NaN(), 3), ".");
}

TEST(TextTable, CoefficientStarsAndStandardError) {
  auto L = three_columns();
  const std::string text = format_table(L, TableStyle::text);
  EXPECT_NE(text.find("0.005***"), std::string::npos);
  EXPECT_NE(text.find("(0.001)"), std::string::npos);
  EXPECT_NE(text.find("Robust (HC1)"), std::string::npos);
  EXPECT_NE(text.find("*** p<0.01, ** p<0.05, * p<0.1"), std::string::npos);
  EXPECT_NE(text.find("[0.003, 0.007]"), std::string::npos);
  EXPECT_NE(text.find("48.250"), std::string::npos);
}

TEST(TextTable, AbsentCoefficientLeavesBlankCell) {
  auto L = three_columns();
  const std::string text = format_table(L, TableStyle::text);
  std::istringstream in(text);
  std::string line;
  bool seen = false;
  while (std::getline(in, line)) {
    if (line.rfind("zshift", 0) != 0) continue;
    seen = true;
    // only the first-stage column carries a value
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    EXPECT_EQ(tok.size(), 2u) << line;
  }
  EXPECT_TRUE(seen);
}

TEST(TextTable, RowOrderFollowsLayout) {
  auto L = three_columns();
  L.rows = {"lgdp", "kopen"};
  const std::string text = format_table(L, TableStyle::text);
  EXPECT_LT(text.find("lgdp"), text.find("kopen"));
  L.rows = {"missing_row"};
  EXPECT_THROW(format_table(L, TableStyle::text), ConfigError);
}

TEST(CsvTable, ReparsesToPrintedNumbers) {
  auto L = three_columns();
  const std::string csv_text = format_table(L, TableStyle::csv);
  std::istringstream in(csv_text);
  std::string line;
  std::size_t line_no = 0;
  ASSERT_TRUE(csv::next_line(in, line, line_no));
  EXPECT_EQ(line, "section,row,column,value,std_error,p_value,stars");
  std::size_t coef_rows = 0;
  while (csv::next_line(in, line, line_no)) {
    auto f = csv::split_record(line, line_no);
    ASSERT_EQ(f.size(), 7u) << line;
    if (f[0] != "coef") continue;
    ++coef_rows;
    const EstimationResult* r = nullptr;
    for (const auto& c : L.columns)
      if (c.label == f[2]) r = &c.result;
    ASSERT_NE(r, nullptr);
    bool ok = true;
    EXPECT_NEAR(*csv::parse_double(f[3], ok), r->coefficient(f[1]), 0.5e-3);
    EXPECT_NEAR(*csv::parse_double(f[4], ok), r->std_error(f[1]), 0.5e-3);
    EXPECT_EQ(f[6], significance_stars(r->p_value(f[1])));
  }
  EXPECT_EQ(coef_rows, 6u);
}

TEST(LatexTable, HasStarsAndEscapes) {
  auto L = three_columns();
  L.columns[2].result.names[0] = "z_shift";
  const std::string tex = format_table(L, TableStyle::latex);
  EXPECT_NE(tex.find("0.005$^{***}$"), std::string::npos);
  EXPECT_NE(tex.find("z\\_shift"), std::string::npos);
  EXPECT_NE(tex.find("\\begin{tabular}{lccc}"), std::string::npos);
  EXPECT_NE(tex.find("AR 95\\% set"), std::string::npos);
}

TEST(Tables, OutputIsByteIdenticalAcrossRuns) {
  for (auto style : {TableStyle::text, TableStyle::csv, TableStyle::latex})
    EXPECT_EQ(format_table(three_columns(), style), format_table(three_columns(), style));
}

TEST(Tables, UnknownStyleOrEmptyLayoutIsAConfigError) {
  EXPECT_THROW(parse_table_style("html"), ConfigError);
  EXPECT_THROW(format_table(three_columns(), "markdown"), ConfigError);
  EXPECT_THROW(format_table(TableLayout{}, TableStyle::text), ConfigError);
}

TEST(Tables, UnboundedSetRendersInfiniteEnds) {
  auto L = three_columns();
  ArConfidenceSet s;
  s.intervals.push_back({-std::numeric_limits<double>::infinity(), -2.0});
  s.intervals.push_back({1.5, std::numeric_limits<double>::infinity()});
  s.unbounded = s.disjoint = true;
  L.columns[1].result.diagnostics->ar_set = s;
  const std::string text = format_table(L, TableStyle::text);
  EXPECT_NE(text.find("(-inf, -2.000] U [1.500, inf)"), std::string::npos);
}
