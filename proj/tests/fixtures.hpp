#pragma once

// Shared fixture builders for the unit and acceptance suites.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "oracles.hpp"
#include "panelkit/instrument.hpp"
#include "panelkit/panel.hpp"

namespace fixtures {

/// PanelDataset from long-form rows; absent cells stay missing.
inline panelkit::PanelDataset long_panel(std::size_t n_entities, std::size_t n_periods,
                                         const std::vector<std::size_t>& entity,
                                         const std::vector<std::size_t>& period,
                                         const std::map<std::string, Eigen::VectorXd>& cols,
                                         const std::vector<std::string>& order = {}) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n_entities; ++i) ids.push_back("E" + std::to_string(10 + i));
  std::vector<int> years;
  for (std::size_t t = 0; t < n_periods; ++t) years.push_back(2000 + static_cast<int>(t));
  panelkit::PanelDataset ds(ids, years);
  std::vector<std::string> names = order;
  if (names.empty())
    for (const auto& [k, v] : cols) names.push_back(k);
  for (const auto& name : names) {
    const auto& v = cols.at(name);
    std::vector<double> cells(ds.n_cells(), panelkit::kMissing);
    for (std::size_t r = 0; r < entity.size(); ++r)
      cells[ds.cell(entity[r], period[r])] = v(static_cast<Eigen::Index>(r));
    ds = ds.with_column(name, cells);
  }
  return ds;
}

inline panelkit::PanelDataset to_dataset(const oracle::SmallPanel& p) {
  std::map<std::string, Eigen::VectorXd> cols{{"y", p.y}};
  std::vector<std::string> order{"y"};
  for (Eigen::Index k = 0; k < p.X.cols(); ++k) {
    cols["x" + std::to_string(k)] = p.X.col(k);
    order.push_back("x" + std::to_string(k));
  }
  return long_panel(p.n_entities, p.n_periods, p.entity, p.period, cols, order);
}

/// Balanced IV panel: z relevant for d, confounder u in both d and y.
struct IvPanel {
  std::size_t n_entities, n_periods;
  std::vector<std::size_t> entity, period;
  Eigen::VectorXd y, d, z, x, z2;
};

inline IvPanel iv_panel(std::mt19937_64& rng, std::size_t n_entities, std::size_t n_periods,
                        double pi = 1.0, double beta = 0.5) {
  std::normal_distribution<double> normal;
  IvPanel p{n_entities, n_periods, {}, {}, {}, {}, {}, {}, {}};
  const auto n = static_cast<Eigen::Index>(n_entities * n_periods);
  p.y.resize(n); p.d.resize(n); p.z.resize(n); p.x.resize(n); p.z2.resize(n);
  std::vector<double> a(n_entities), g(n_periods);
  for (auto& v : a) v = normal(rng);
  for (auto& v : g) v = normal(rng);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < n_entities; ++i)
    for (std::size_t t = 0; t < n_periods; ++t, ++r) {
      p.entity.push_back(i);
      p.period.push_back(t);
      const double u = normal(rng);
      p.z(r) = normal(rng) + 0.3 * a[i];
      p.z2(r) = normal(rng);
      p.x(r) = normal(rng);
      p.d(r) = pi * p.z(r) + 0.4 * p.z2(r) + 0.3 * p.x(r) + a[i] + g[t] + u + normal(rng);
      p.y(r) = beta * p.d(r) + 0.7 * p.x(r) - a[i] + 2.0 * g[t] + u + normal(rng) * (1.0 + 0.5 * std::abs(p.x(r)));
    }
  return p;
}

inline panelkit::PanelDataset to_dataset(const IvPanel& p) {
  return long_panel(p.n_entities, p.n_periods, p.entity, p.period,
                    {{"y", p.y}, {"d", p.d}, {"z", p.z}, {"z2", p.z2}, {"x", p.x}},
                    {"y", "d", "z", "z2", "x"});
}

// Random symmetric geography and a complete openness panel.
struct World {
  std::vector<std::string> ids;
  std::vector<int> years;
  std::vector<std::vector<double>> dist;
  std::vector<std::vector<double>> K;  // entity x period
  panelkit::DistanceMatrix D;
  panelkit::PanelDataset panel;
  panelkit::GlobalRateSeries rate;
};

inline World random_world(std::mt19937_64& rng, std::size_t n, std::size_t T, int first_year) {
  std::uniform_real_distribution<double> coord(0.0, 5000.0), unit(0.0, 1.0), r(0.5, 8.0);
  World w;
  std::vector<std::pair<double, double>> xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "C%03zu", i);
    w.ids.push_back(buf);
    xy[i] = {coord(rng), coord(rng)};
  }
  for (std::size_t t = 0; t < T; ++t) w.years.push_back(first_year + static_cast<int>(t));
  w.dist.assign(n, std::vector<double>(n, 0.0));
  std::vector<std::tuple<std::string, std::string, double>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::hypot(xy[i].first - xy[j].first, xy[i].second - xy[j].second) + 1.0;
      w.dist[i][j] = w.dist[j][i] = d;
      pairs.emplace_back(w.ids[i], w.ids[j], d);
    }
  w.D = panelkit::DistanceMatrix::from_pairs(pairs);
  w.K.assign(n, std::vector<double>(T));
  std::vector<double> cells;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < T; ++t) {
      w.K[i][t] = unit(rng);
      cells.push_back(w.K[i][t]);
    }
  w.panel = panelkit::PanelDataset(w.ids, w.years).with_column("kopen", cells);
  for (int y : w.years) w.rate.rates[y] = r(rng);
  return w;
}

}  // namespace fixtures
