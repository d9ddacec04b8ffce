#pragma once

// Panel data model: rectangular entity x period storage, CSV ingestion,
// column transforms, sample selection, and fixed-effect absorption helpers.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "panelkit/csv.hpp"
#include "panelkit/errors.hpp"

namespace panelkit {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) noexcept { return std::isnan(v); }

struct Column {
  std::string name;
  std::vector<double> values;  // entity-major: index = entity * n_periods + period
  std::string note;
};

/// Immutable entity x period store. Adding a column returns a new dataset
/// that shares the untouched columns with the original.
class PanelDataset {
 public:
  PanelDataset() = default;

  PanelDataset(std::vector<std::string> entities, std::vector<int> periods)
      : entities_(std::move(entities)), periods_(std::move(periods)) {
    for (std::size_t i = 0; i < entities_.size(); ++i) {
      if (!entity_index_.emplace(entities_[i], i).second)
        throw DataError("duplicate entity identifier '" + entities_[i] + "'");
    }
    for (std::size_t t = 0; t < periods_.size(); ++t) {
      if (t > 0 && periods_[t] <= periods_[t - 1])
        throw DataError("periods must be strictly increasing");
      period_index_.emplace(periods_[t], t);
    }
  }

  std::size_t n_entities() const noexcept { return entities_.size(); }
  std::size_t n_periods() const noexcept { return periods_.size(); }
  std::size_t n_cells() const noexcept { return entities_.size() * periods_.size(); }

  const std::vector<std::string>& entities() const noexcept { return entities_; }
  const std::vector<int>& periods() const noexcept { return periods_; }

  std::optional<std::size_t> entity_index(const std::string& id) const {
    auto it = entity_index_.find(id);
    if (it == entity_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> period_index(int year) const {
    auto it = period_index_.find(year);
    if (it == period_index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t cell(std::size_t entity, std::size_t period) const noexcept {
    return entity * periods_.size() + period;
  }

  bool has_column(const std::string& name) const {
    return column_index_.count(name) != 0;
  }

  const Column& column(const std::string& name) const {
    auto it = column_index_.find(name);
    if (it == column_index_.end())
      throw DataError("unknown column '" + name + "'");
    return *columns_[it->second];
  }

  const std::vector<double>& values(const std::string& name) const {
    return column(name).values;
  }

  /// Column names in insertion order.
  std::vector<std::string> column_names() const {
    std::vector<std::string> out;
    out.reserve(columns_.size());
    for (const auto& c : columns_) out.push_back(c->name);
    return out;
  }

  double at(const std::string& name, std::size_t entity, std::size_t period) const {
    return column(name).values[cell(entity, period)];
  }

  PanelDataset with_column(std::string name, std::vector<double> values,
                           std::string note = {}) const {
    if (has_column(name))
      throw ConfigError("column '" + name + "' already exists");
    if (values.size() != n_cells())
      throw DataError("column '" + name + "' has " +
                      std::to_string(values.size()) + " cells, expected " +
                      std::to_string(n_cells()));
    PanelDataset out = *this;
    out.column_index_.emplace(name, out.columns_.size());
    out.columns_.push_back(std::make_shared<const Column>(
        Column{std::move(name), std::move(values), std::move(note)}));
    return out;
  }

 private:
  std::vector<std::string> entities_;
  std::vector<int> periods_;
  std::unordered_map<std::string, std::size_t> entity_index_;
  std::unordered_map<int, std::size_t> period_index_;
  std::vector<std::shared_ptr<const Column>> columns_;
  std::unordered_map<std::string, std::size_t> column_index_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

/// Reads a long-format panel: one row per (entity, time) pair, every other
/// column numeric. Entities are sorted lexicographically and periods
/// ascending; pairs absent from the file are missing.
inline PanelDataset read_panel_csv(std::istream& in, const std::string& entity_col,
                                   const std::string& time_col,
                                   const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no))
    throw ParseError(1, source + ": missing header row");
  auto header = csv::split_record(line, line_no);
  for (auto& h : header) h = std::string(csv::trim(h));

  std::optional<std::size_t> entity_pos, time_pos;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].empty()) throw ParseError(line_no, "empty column name in header");
    if (!seen.insert(header[i]).second)
      throw ParseError(line_no, "duplicate column name '" + header[i] + "'");
    if (header[i] == entity_col) entity_pos = i;
    if (header[i] == time_col) time_pos = i;
  }
  if (!entity_pos) throw ParseError(line_no, "entity column '" + entity_col + "' not found");
  if (!time_pos) throw ParseError(line_no, "time column '" + time_col + "' not found");

  struct Row {
    std::string entity;
    int period;
    std::vector<double> values;
  };
  std::vector<Row> rows;
  std::set<std::pair<std::string, int>> keys;
  std::set<std::string> entity_set;
  std::set<int> period_set;

  while (csv::next_line(in, line, line_no)) {
    auto fields = csv::split_record(line, line_no);
    if (fields.size() != header.size())
      throw ParseError(line_no, "expected " + std::to_string(header.size()) +
                                    " fields, found " + std::to_string(fields.size()));
    Row row;
    row.entity = std::string(csv::trim(fields[*entity_pos]));
    if (row.entity.empty()) throw ParseError(line_no, "empty entity identifier");
    auto year = csv::parse_integer(fields[*time_pos]);
    if (!year || *year < std::numeric_limits<int>::min() ||
        *year > std::numeric_limits<int>::max())
      throw CellTypeError("column '" + time_col + "', line " + std::to_string(line_no) +
                          ": time value '" + fields[*time_pos] + "' is not an integer");
    row.period = static_cast<int>(*year);
    if (!keys.emplace(row.entity, row.period).second)
      throw DuplicateObservationError("duplicate observation (" + row.entity + ", " +
                                      std::to_string(row.period) + ") at line " +
                                      std::to_string(line_no));
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i == *entity_pos || i == *time_pos) continue;
      bool ok = true;
      auto v = csv::parse_double(fields[i], ok);
      if (!ok)
        throw CellTypeError("column '" + header[i] + "', line " + std::to_string(line_no) +
                            ": '" + fields[i] + "' is not numeric");
      row.values.push_back(v ? *v : kMissing);
    }
    entity_set.insert(row.entity);
    period_set.insert(row.period);
    rows.push_back(std::move(row));
  }

  PanelDataset shape({entity_set.begin(), entity_set.end()},
                     {period_set.begin(), period_set.end()});
  std::vector<std::string> value_names;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (i != *entity_pos && i != *time_pos) value_names.push_back(header[i]);

  std::vector<std::vector<double>> data(value_names.size(),
                                        std::vector<double>(shape.n_cells(), kMissing));
  for (const auto& row : rows) {
    const std::size_t c = shape.cell(*shape.entity_index(row.entity),
                                     *shape.period_index(row.period));
    for (std::size_t j = 0; j < value_names.size(); ++j) data[j][c] = row.values[j];
  }
  PanelDataset out = shape;
  for (std::size_t j = 0; j < value_names.size(); ++j)
    out = out.with_column(value_names[j], std::move(data[j]), "source: " + source);
  return out;
}

inline PanelDataset load_panel_csv(const std::string& path, const std::string& entity_col,
                                   const std::string& time_col) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_panel_csv(in, entity_col, time_col, path);
}

/// Writes the dataset in the long format accepted by read_panel_csv, with
/// columns in insertion order and missing cells as empty strings.
inline void write_panel_csv(std::ostream& out, const PanelDataset& ds,
                            const std::string& entity_col = "entity",
                            const std::string& time_col = "year") {
  const auto names = ds.column_names();
  out << csv::quote_if_needed(entity_col) << ',' << csv::quote_if_needed(time_col);
  for (const auto& n : names) out << ',' << csv::quote_if_needed(n);
  out << '\n';
  std::vector<const std::vector<double>*> cols;
  for (const auto& n : names) cols.push_back(&ds.values(n));
  for (std::size_t e = 0; e < ds.n_entities(); ++e) {
    for (std::size_t t = 0; t < ds.n_periods(); ++t) {
      out << csv::quote_if_needed(ds.entities()[e]) << ',' << ds.periods()[t];
      for (auto* c : cols) out << ',' << csv::format_double((*c)[ds.cell(e, t)]);
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Transforms

enum class TransformKind { log, lag, square, interaction, first_difference };

struct Transform {
  TransformKind kind;
  std::vector<std::string> sources;
  std::string output;
  int lag = 1;  // lag order for TransformKind::lag
};

inline std::optional<TransformKind> parse_transform_kind(const std::string& s) {
  static const std::map<std::string, TransformKind> names = {
      {"log", TransformKind::log},
      {"lag", TransformKind::lag},
      {"square", TransformKind::square},
      {"interaction", TransformKind::interaction},
      {"diff", TransformKind::first_difference},
  };
  auto it = names.find(s);
  if (it == names.end()) return std::nullopt;
  return it->second;
}

namespace detail {

// Value of `col` for the same entity `offset` years earlier, or missing.
inline double shifted(const PanelDataset& ds, const std::vector<double>& col,
                      std::size_t e, std::size_t t, int offset) {
  auto src = ds.period_index(ds.periods()[t] - offset);
  if (!src) return kMissing;
  return col[ds.cell(e, *src)];
}

}  // namespace detail

/// Appends the transformed column. Any missing input cell gives a missing
/// output cell; lags and differences look up the period `k` years earlier
/// within the same entity.
inline PanelDataset apply_transform(const PanelDataset& ds, const Transform& t) {
  const std::size_t want_sources = t.kind == TransformKind::interaction ? 2 : 1;
  if (t.sources.size() != want_sources)
    throw ConfigError("transform '" + t.output + "' needs " +
                      std::to_string(want_sources) + " source column(s)");
  for (const auto& s : t.sources)
    if (!ds.has_column(s))
      throw ConfigError("transform '" + t.output + "': unknown source column '" + s + "'");
  if (t.output.empty()) throw ConfigError("transform output name is empty");
  if (ds.has_column(t.output))
    throw ConfigError("transform output '" + t.output + "' collides with an existing column");

  const auto& a = ds.values(t.sources[0]);
  std::vector<double> out(ds.n_cells(), kMissing);
  std::string note;

  switch (t.kind) {
    case TransformKind::log: {
      std::size_t nonpositive = 0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (is_missing(a[i])) continue;
        if (a[i] > 0.0) out[i] = std::log(a[i]);
        else ++nonpositive;
      }
      if (nonpositive > 0)
        warn("log(" + t.sources[0] + "): " + std::to_string(nonpositive) +
             " non-positive cell(s) set to missing");
      note = "log(" + t.sources[0] + ")";
      break;
    }
    case TransformKind::lag: {
      if (t.lag < 1) throw ConfigError("lag order must be >= 1");
      if (static_cast<std::size_t>(t.lag) >= ds.n_periods())
        throw ConfigError("lag order " + std::to_string(t.lag) +
                          " is not smaller than the number of periods");
      for (std::size_t e = 0; e < ds.n_entities(); ++e)
        for (std::size_t p = 0; p < ds.n_periods(); ++p)
          out[ds.cell(e, p)] = detail::shifted(ds, a, e, p, t.lag);
      note = "lag" + std::to_string(t.lag) + "(" + t.sources[0] + ")";
      break;
    }
    case TransformKind::square:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
      note = "square(" + t.sources[0] + ")";
      break;
    case TransformKind::interaction: {
      const auto& b = ds.values(t.sources[1]);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
      note = t.sources[0] + "*" + t.sources[1];
      break;
    }
    case TransformKind::first_difference:
      if (ds.n_periods() < 2) throw ConfigError("first difference needs >= 2 periods");
      for (std::size_t e = 0; e < ds.n_entities(); ++e)
        for (std::size_t p = 0; p < ds.n_periods(); ++p)
          out[ds.cell(e, p)] = a[ds.cell(e, p)] - detail::shifted(ds, a, e, p, 1);
      note = "diff(" + t.sources[0] + ")";
      break;
  }
  return ds.with_column(t.output, std::move(out), note);
}

// ---------------------------------------------------------------------------
// Sample selection

struct SampleFilter {
  std::optional<int> first_period;
  std::optional<int> last_period;
  std::optional<std::vector<std::string>> entities;  // allowlist
  std::map<std::string, std::string> entity_groups;  // entity -> group label
  std::optional<std::string> group;                  // keep only this label
  std::vector<std::string> complete_on;              // listwise-deletion set
};

struct CellKey {
  std::size_t entity;
  std::size_t period;
  friend bool operator==(const CellKey&, const CellKey&) = default;
};

/// Retained cells in entity-major order plus per-entity bookkeeping.
struct Sample {
  std::vector<CellKey> rows;
  std::vector<std::size_t> entities;       // retained entity indices, ascending
  std::vector<std::size_t> entity_counts;  // retained cells per retained entity
  std::vector<std::size_t> entity_of_row;  // position in `entities` for each row
  std::vector<std::size_t> periods;        // retained period indices, ascending
  std::vector<std::string> dropped_singletons;

  std::size_t n_obs() const noexcept { return rows.size(); }
  std::size_t n_entities() const noexcept { return entities.size(); }
};

/// Applies the period window, entity allowlist, group label, and listwise
/// deletion. With `drop_singletons`, entities left with a single retained
/// cell are removed and reported in `dropped_singletons`.
inline Sample select_sample(const PanelDataset& ds, const SampleFilter& f,
                            bool drop_singletons = false) {
  std::vector<const std::vector<double>*> cols;
  for (const auto& name : f.complete_on) {
    if (!ds.has_column(name)) throw ConfigError("unknown column '" + name + "'");
    cols.push_back(&ds.values(name));
  }
  std::set<std::string> allow;
  if (f.entities) allow.insert(f.entities->begin(), f.entities->end());

  Sample s;
  std::vector<char> period_used(ds.n_periods(), 0);
  for (std::size_t e = 0; e < ds.n_entities(); ++e) {
    const auto& id = ds.entities()[e];
    if (f.entities && !allow.count(id)) continue;
    if (f.group) {
      auto it = f.entity_groups.find(id);
      if (it == f.entity_groups.end() || it->second != *f.group) continue;
    }
    std::vector<CellKey> cells;
    for (std::size_t t = 0; t < ds.n_periods(); ++t) {
      const int year = ds.periods()[t];
      if (f.first_period && year < *f.first_period) continue;
      if (f.last_period && year > *f.last_period) continue;
      const std::size_t c = ds.cell(e, t);
      bool complete = true;
      for (auto* col : cols)
        if (is_missing((*col)[c])) { complete = false; break; }
      if (complete) cells.push_back({e, t});
    }
    if (cells.empty()) continue;
    if (drop_singletons && cells.size() == 1) {
      s.dropped_singletons.push_back(id);
      continue;
    }
    const std::size_t pos = s.entities.size();
    s.entities.push_back(e);
    s.entity_counts.push_back(cells.size());
    for (const auto& k : cells) {
      s.rows.push_back(k);
      s.entity_of_row.push_back(pos);
      period_used[k.period] = 1;
    }
  }
  for (std::size_t t = 0; t < ds.n_periods(); ++t)
    if (period_used[t]) s.periods.push_back(t);
  if (!s.dropped_singletons.empty())
    warn("dropped " + std::to_string(s.dropped_singletons.size()) +
         " singleton entit" + (s.dropped_singletons.size() == 1 ? "y" : "ies") +
         " with one retained period");
  return s;
}

/// Gathers the named columns over the sample rows into a dense matrix.
inline Eigen::MatrixXd gather(const PanelDataset& ds, const Sample& s,
                              const std::vector<std::string>& vars) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(s.n_obs()),
                    static_cast<Eigen::Index>(vars.size()));
  for (std::size_t j = 0; j < vars.size(); ++j) {
    const auto& col = ds.values(vars[j]);
    for (std::size_t r = 0; r < s.n_obs(); ++r) {
      const double v = col[ds.cell(s.rows[r].entity, s.rows[r].period)];
      if (is_missing(v))
        throw DataError("missing value in '" + vars[j] + "' inside the estimation sample");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return m;
}

/// Subtracts per-entity means (over retained rows) in place.
inline void demean_in_place(Eigen::MatrixXd& m, const Sample& s) {
  const auto n_ent = static_cast<Eigen::Index>(s.n_entities());
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_ent, m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    sums.row(static_cast<Eigen::Index>(s.entity_of_row[r])) += m.row(r);
  for (Eigen::Index g = 0; g < n_ent; ++g)
    sums.row(g) /= static_cast<double>(s.entity_counts[g]);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    m.row(r) -= sums.row(static_cast<Eigen::Index>(s.entity_of_row[r]));
}

struct DemeanedBlock {
  Sample sample;
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // rows follow sample.rows
};

/// Entity within-transformation of `vars` over the filtered sample. Every
/// retained entity must have at least two retained periods.
inline DemeanedBlock within_demean(const PanelDataset& ds, const std::vector<std::string>& vars,
                                   const SampleFilter& filter) {
  SampleFilter f = filter;
  for (const auto& v : vars)
    if (std::find(f.complete_on.begin(), f.complete_on.end(), v) == f.complete_on.end())
      f.complete_on.push_back(v);
  DemeanedBlock out{select_sample(ds, f), vars, {}};
  for (std::size_t g = 0; g < out.sample.n_entities(); ++g)
    if (out.sample.entity_counts[g] < 2)
      throw DataError("singleton entity '" + ds.entities()[out.sample.entities[g]] +
                      "' has no within variation");
  out.values = gather(ds, out.sample, vars);
  demean_in_place(out.values, out.sample);
  return out;
}

struct DummyBlock {
  std::vector<int> periods;  // one per column
  int base_period = 0;
  Eigen::MatrixXd values;    // rows follow the sample rows
};

/// Drop-first period indicators for the sample rows.
inline DummyBlock time_dummies(const PanelDataset& ds, const Sample& s) {
  if (s.periods.size() < 2)
    throw DataError("the sample has a single retained period; time effects are not identified");
  DummyBlock out;
  out.base_period = ds.periods()[s.periods.front()];
  std::vector<Eigen::Index> column_of(ds.n_periods(), -1);
  for (std::size_t j = 1; j < s.periods.size(); ++j) {
    column_of[s.periods[j]] = static_cast<Eigen::Index>(j - 1);
    out.periods.push_back(ds.periods()[s.periods[j]]);
  }
  out.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.n_obs()),
                                     static_cast<Eigen::Index>(s.periods.size() - 1));
  for (std::size_t r = 0; r < s.n_obs(); ++r) {
    const auto c = column_of[s.rows[r].period];
    if (c >= 0) out.values(static_cast<Eigen::Index>(r), c) = 1.0;
  }
  return out;
}

inline DummyBlock build_time_dummies(const PanelDataset& ds, const SampleFilter& filter) {
  return time_dummies(ds, select_sample(ds, filter));
}

}  // namespace panelkit
