#pragma once

// Exposure instrument z_it = r_t * kbar_i: a global rate series times the
// time-averaged, inverse-distance-weighted openness of i's neighbors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "panelkit/csv.hpp"
#include "panelkit/errors.hpp"
#include "panelkit/panel.hpp"

namespace panelkit {

/// Symmetric pairwise distances (km) with a zero diagonal. Every
/// off-diagonal pair among the loaded entities must be present and positive.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;

  /// Builds from undirected pairs; entities are sorted lexicographically.
  static DistanceMatrix from_pairs(
      const std::vector<std::tuple<std::string, std::string, double>>& pairs) {
    std::set<std::string> ids;
    for (const auto& [a, b, d] : pairs) {
      ids.insert(a);
      ids.insert(b);
    }
    DistanceMatrix m;
    m.entities_.assign(ids.begin(), ids.end());
    for (std::size_t i = 0; i < m.entities_.size(); ++i) m.index_.emplace(m.entities_[i], i);
    const std::size_t n = m.entities_.size();
    m.dist_.assign(n * n, kMissing);
    for (std::size_t i = 0; i < n; ++i) m.dist_[i * n + i] = 0.0;
    for (const auto& [a, b, d] : pairs) {
      if (a == b) throw DataError("distance pair (" + a + ", " + b + ") is a self pair");
      if (!(d > 0.0) || !std::isfinite(d))
        throw DataError("distance between " + a + " and " + b + " must be positive, got " +
                        csv::format_double(d));
      const std::size_t i = m.index_.at(a), j = m.index_.at(b);
      if (!is_missing(m.dist_[i * n + j]))
        throw DataError("duplicate distance pair (" + a + ", " + b + ")");
      m.dist_[i * n + j] = d;
      m.dist_[j * n + i] = d;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (is_missing(m.dist_[i * n + j]))
          throw DataError("missing distance between " + m.entities_[i] + " and " + m.entities_[j]);
    return m;
  }

  const std::vector<std::string>& entities() const noexcept { return entities_; }
  std::size_t size() const noexcept { return entities_.size(); }

  std::optional<std::size_t> index(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  double operator()(std::size_t i, std::size_t j) const { return dist_[i * size() + j]; }

  DistanceMatrix scaled(double factor) const {
    DistanceMatrix out = *this;
    for (auto& d : out.dist_) d *= factor;
    return out;
  }

 private:
  std::vector<std::string> entities_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> dist_;
};

/// Distance CSV: header with entity_a, entity_b, distance_km.
inline DistanceMatrix read_distance_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no)) throw ParseError(1, source + ": missing header row");
  auto header = csv::split_record(line, line_no);
  std::optional<std::size_t> a_pos, b_pos, d_pos;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto h = csv::trim(header[i]);
    if (h == "entity_a") a_pos = i;
    else if (h == "entity_b") b_pos = i;
    else if (h == "distance_km") d_pos = i;
  }
  if (!a_pos || !b_pos || !d_pos)
    throw ParseError(line_no, "distance file needs columns entity_a, entity_b, distance_km");
  std::vector<std::tuple<std::string, std::string, double>> pairs;
  std::set<std::pair<std::string, std::string>> seen;
  while (csv::next_line(in, line, line_no)) {
    auto f = csv::split_record(line, line_no);
    if (f.size() != header.size())
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                    std::to_string(f.size()));
    std::string a(csv::trim(f[*a_pos])), b(csv::trim(f[*b_pos]));
    if (a.empty() || b.empty()) throw ParseError(line_no, "empty entity identifier");
    bool ok = true;
    auto d = csv::parse_double(f[*d_pos], ok);
    if (!ok || !d)
      throw CellTypeError("column 'distance_km', line " + std::to_string(line_no) + ": '" +
                          f[*d_pos] + "' is not a number");
    if (!seen.emplace(std::min(a, b), std::max(a, b)).second)
      throw DuplicateObservationError("duplicate distance pair (" + a + ", " + b + ") at line " +
                                      std::to_string(line_no));
    pairs.emplace_back(a, b, *d);
  }
  return DistanceMatrix::from_pairs(pairs);
}

inline DistanceMatrix load_distance_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_distance_csv(in, path);
}

/// Global rate series i*_t (percent per annum), keyed by year.
struct GlobalRateSeries {
  std::map<int, double> rates;

  double at(int year) const {
    auto it = rates.find(year);
    if (it == rates.end()) throw DataError("rate series has no value for year " + std::to_string(year));
    return it->second;
  }
  GlobalRateSeries scaled(double factor) const {
    GlobalRateSeries out = *this;
    for (auto& [year, r] : out.rates) r *= factor;
    return out;
  }
};

/// Rate CSV: a time column and a value column; empty values are missing.
inline GlobalRateSeries read_rate_csv(std::istream& in, const std::string& time_col,
                                      const std::string& rate_col,
                                      const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no)) throw ParseError(1, source + ": missing header row");
  auto header = csv::split_record(line, line_no);
  std::optional<std::size_t> t_pos, r_pos;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto h = csv::trim(header[i]);
    if (h == time_col) t_pos = i;
    if (h == rate_col) r_pos = i;
  }
  if (!t_pos) throw ParseError(line_no, "time column '" + time_col + "' not found");
  if (!r_pos) throw ParseError(line_no, "rate column '" + rate_col + "' not found");
  GlobalRateSeries out;
  while (csv::next_line(in, line, line_no)) {
    auto f = csv::split_record(line, line_no);
    if (f.size() != header.size())
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                    std::to_string(f.size()));
    auto year = csv::parse_integer(f[*t_pos]);
    if (!year)
      throw CellTypeError("column '" + time_col + "', line " + std::to_string(line_no) +
                          ": time value '" + f[*t_pos] + "' is not an integer");
    bool ok = true;
    auto v = csv::parse_double(f[*r_pos], ok);
    if (!ok)
      throw CellTypeError("column '" + rate_col + "', line " + std::to_string(line_no) + ": '" +
                          f[*r_pos] + "' is not numeric");
    if (out.rates.count(static_cast<int>(*year)))
      throw DuplicateObservationError("duplicate rate year " + std::to_string(*year) +
                                      " at line " + std::to_string(line_no));
    if (v) out.rates.emplace(static_cast<int>(*year), *v);
  }
  return out;
}

inline GlobalRateSeries load_rate_csv(const std::string& path, const std::string& time_col,
                                      const std::string& rate_col) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_rate_csv(in, time_col, rate_col, path);
}

// ---------------------------------------------------------------------------

struct WeightOptions {
  /// Include the target itself, at distance `self_distance_km`. Off by
  /// default: own openness would reintroduce the endogeneity the neighbor
  /// average avoids.
  bool include_self = false;
  double self_distance_km = 0.0;
};

using NeighborWeights = std::vector<std::pair<std::string, double>>;

/// w_ij = (1/d_ij) / sum_k (1/d_ik) over the candidate neighbors (all other
/// entities of `D` when `candidates` is empty). Weights are returned in the
/// order of D's entities and sum to one.
inline NeighborWeights inverse_distance_weights(const DistanceMatrix& D, const std::string& target,
                                                const WeightOptions& opt = {},
                                                std::span<const std::string> candidates = {}) {
  const auto ti = D.index(target);
  if (!ti) throw DataError("entity '" + target + "' has no distance data");
  std::vector<char> use(D.size(), candidates.empty() ? 1 : 0);
  for (const auto& c : candidates) {
    auto ci = D.index(c);
    if (!ci) throw DataError("neighbor '" + c + "' has no distance data");
    use[*ci] = 1;
  }
  if (opt.include_self && !(opt.self_distance_km > 0.0))
    throw ConfigError("including the own entity needs a positive self distance");

  NeighborWeights w;
  double total = 0.0;
  for (std::size_t j = 0; j < D.size(); ++j) {
    double d;
    if (j == *ti) {
      if (!opt.include_self) continue;
      d = opt.self_distance_km;
    } else {
      if (!use[j]) continue;
      d = D(*ti, j);
      if (!(d > 0.0)) throw DataError("non-positive distance between " + target + " and " + D.entities()[j]);
    }
    w.emplace_back(D.entities()[j], 1.0 / d);
    total += 1.0 / d;
  }
  if (w.empty() || (w.size() == 1 && w[0].first == target))
    throw DataError("entity '" + target + "' has no neighbors to weight");
  for (auto& [id, v] : w) v /= total;
  return w;
}

struct WeightedSeries {
  std::vector<double> values;       // one per period of the openness panel
  std::vector<char> renormalized;   // some neighbor missing; weights rescaled
};

/// sum_j w_ij K_jt for every period of `K`. When some neighbors are missing
/// in a period the weights are renormalized over the observed ones and the
/// cell is flagged; with no observed neighbor the cell is missing.
inline WeightedSeries neighbor_weighted_openness(const PanelDataset& K, const std::string& column,
                                                 const NeighborWeights& w) {
  const auto& values = K.values(column);
  std::vector<std::size_t> rows;
  for (const auto& [id, weight] : w) {
    auto e = K.entity_index(id);
    if (!e) throw DataError("neighbor '" + id + "' is not in the openness panel");
    rows.push_back(*e);
  }
  WeightedSeries out;
  out.values.assign(K.n_periods(), kMissing);
  out.renormalized.assign(K.n_periods(), 0);
  for (std::size_t t = 0; t < K.n_periods(); ++t) {
    double sum = 0.0, mass = 0.0;
    bool any_missing = false;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double k = values[K.cell(rows[j], t)];
      if (is_missing(k)) {
        any_missing = true;
        continue;
      }
      sum += w[j].second * k;
      mass += w[j].second;
    }
    if (mass == 0.0) {
      warn("no neighbor openness observed in " + std::to_string(K.periods()[t]));
      continue;
    }
    out.values[t] = any_missing ? sum / mass : sum;
    out.renormalized[t] = any_missing ? 1 : 0;
  }
  return out;
}

/// Mean over the non-missing values.
inline double time_average(std::span<const double> series) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : series)
    if (!is_missing(v)) {
      sum += v;
      ++n;
    }
  if (n == 0) throw DataError("cannot average a series with no observed values");
  return sum / static_cast<double>(n);
}

struct BuildOptions {
  int first_period = 1991;  // averaging window, inclusive
  int last_period = 2015;
  WeightOptions weights;
  std::optional<std::vector<std::string>> targets;  // default: openness entities in D
  std::optional<std::vector<int>> output_periods;   // default: openness periods
  std::map<std::string, std::string> provenance;    // e.g. input digests
};

struct InstrumentSeries {
  std::vector<std::string> entities;
  std::vector<int> periods;
  std::vector<double> values;  // entity-major, missing where the rate is absent
  std::map<std::string, double> kopen_bar;
  std::map<std::string, NeighborWeights> weights;
  std::vector<std::pair<std::string, int>> renormalized_cells;
  double openness_min = 0.0;
  double openness_max = 0.0;
  std::map<std::string, std::string> provenance;

  double at(std::size_t e, std::size_t t) const { return values[e * periods.size() + t]; }

  /// Adds the instrument as a column of `panel` (cells outside the series
  /// are missing).
  PanelDataset merge_into(const PanelDataset& panel, const std::string& name) const {
    std::unordered_map<std::string, std::size_t> ent;
    for (std::size_t i = 0; i < entities.size(); ++i) ent.emplace(entities[i], i);
    std::unordered_map<int, std::size_t> per;
    for (std::size_t t = 0; t < periods.size(); ++t) per.emplace(periods[t], t);
    std::vector<double> col(panel.n_cells(), kMissing);
    for (std::size_t e = 0; e < panel.n_entities(); ++e) {
      auto ie = ent.find(panel.entities()[e]);
      if (ie == ent.end()) continue;
      for (std::size_t t = 0; t < panel.n_periods(); ++t) {
        auto it = per.find(panel.periods()[t]);
        if (it != per.end()) col[panel.cell(e, t)] = at(ie->second, it->second);
      }
    }
    return panel.with_column(name, std::move(col), "exposure instrument");
  }
};

/// Composes weights, neighbor averaging, and time averaging into
/// z_it = r_t * kbar_i for every target and output period.
inline InstrumentSeries build_instrument(const DistanceMatrix& D, const PanelDataset& K,
                                         const std::string& openness_column,
                                         const GlobalRateSeries& rate, const BuildOptions& opt) {
  if (opt.first_period > opt.last_period) throw ConfigError("empty averaging window");
  const auto& kv = K.values(openness_column);

  InstrumentSeries out;
  out.provenance = opt.provenance;
  out.openness_min = std::numeric_limits<double>::infinity();
  out.openness_max = -std::numeric_limits<double>::infinity();
  for (double v : kv)
    if (!is_missing(v)) {
      out.openness_min = std::min(out.openness_min, v);
      out.openness_max = std::max(out.openness_max, v);
    }

  std::vector<std::string> neighbors;
  for (const auto& id : K.entities())
    if (D.index(id)) neighbors.push_back(id);
  out.entities = opt.targets ? *opt.targets : neighbors;
  out.periods = opt.output_periods ? *opt.output_periods : K.periods();

  for (int year : out.periods)
    if (year >= opt.first_period && year <= opt.last_period && !rate.rates.count(year))
      throw DataError("rate series is missing year " + std::to_string(year) +
                      " inside the sample window");

  std::vector<std::size_t> window;
  for (std::size_t t = 0; t < K.n_periods(); ++t)
    if (K.periods()[t] >= opt.first_period && K.periods()[t] <= opt.last_period) window.push_back(t);
  if (window.empty()) throw DataError("openness panel has no periods inside the window");

  out.values.assign(out.entities.size() * out.periods.size(), kMissing);
  for (std::size_t e = 0; e < out.entities.size(); ++e) {
    const auto& id = out.entities[e];
    std::vector<std::string> cands;
    for (const auto& n : neighbors)
      if (n != id) cands.push_back(n);
    NeighborWeights w = inverse_distance_weights(D, id, opt.weights, cands);
    WeightedSeries series = neighbor_weighted_openness(K, openness_column, w);
    std::vector<double> in_window;
    for (std::size_t t : window) {
      in_window.push_back(series.values[t]);
      if (series.renormalized[t]) out.renormalized_cells.emplace_back(id, K.periods()[t]);
    }
    const double kbar = time_average(in_window);
    out.kopen_bar.emplace(id, kbar);
    out.weights.emplace(id, std::move(w));
    for (std::size_t t = 0; t < out.periods.size(); ++t) {
      auto r = rate.rates.find(out.periods[t]);
      if (r != rate.rates.end()) out.values[e * out.periods.size() + t] = r->second * kbar;
    }
  }
  return out;
}

}  // namespace panelkit
