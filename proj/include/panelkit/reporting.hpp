#pragma once

// Regression tables: coefficients with significance stars, standard errors
// in parentheses, and a diagnostics footer. Stars use two-sided p-values
// from the t distribution with each model's residual dof.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "panelkit/errors.hpp"
#include "panelkit/result.hpp"

namespace panelkit {

enum class TableStyle { text, csv, latex };

inline TableStyle parse_table_style(const std::string& s) {
  if (s == "text") return TableStyle::text;
  if (s == "csv") return TableStyle::csv;
  if (s == "latex") return TableStyle::latex;
  throw ConfigError("unknown table style '" + s + "' (expected text, csv, or latex)");
}

struct StarLevel {
  double threshold;  // p strictly below this earns the marker
  std::string marker;
};

inline std::vector<StarLevel> default_star_levels() {
  return {{0.01, "***"}, {0.05, "**"}, {0.10, "*"}};
}

/// Marker of the first level whose threshold strictly exceeds p.
inline std::string significance_stars(double p, const std::vector<StarLevel>& levels =
                                                    default_star_levels()) {
  if (!std::isfinite(p)) return {};
  for (const auto& l : levels)
    if (p < l.threshold) return l.marker;
  return {};
}

/// Fixed-point text; "-0.000" is printed as "0.000".
inline std::string fixed(double v, int decimals) {
  if (!std::isfinite(v)) return std::isnan(v) ? "." : (v > 0 ? "inf" : "-inf");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  std::string s(buf);
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

struct TableColumn {
  std::string label;
  EstimationResult result;
};

enum class FooterStat { n_obs, n_entities, r_squared_within, first_stage_f, underid_lm, ar_test, ar_set };

inline std::string footer_label(FooterStat s, double ar_level = 0.95) {
  switch (s) {
    case FooterStat::n_obs: return "N";
    case FooterStat::n_entities: return "Entities";
    case FooterStat::r_squared_within: return "R2 within";
    case FooterStat::first_stage_f: return "F first stage";
    case FooterStat::underid_lm: return "KP rk LM p-value";
    case FooterStat::ar_test: return "AR Wald p-value";
    case FooterStat::ar_set: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "AR %g%% set", ar_level * 100.0);
      return buf;
    }
  }
  return "?";
}

struct TableLayout {
  std::vector<TableColumn> columns;
  std::vector<std::string> rows;  // empty: union of reported names, first-seen order
  std::vector<FooterStat> footer{FooterStat::n_obs,         FooterStat::r_squared_within,
                                 FooterStat::first_stage_f, FooterStat::underid_lm,
                                 FooterStat::ar_test,       FooterStat::ar_set};
  std::vector<StarLevel> stars = default_star_levels();
  int decimals = 3;
  std::string note;

  void validate() const {
    if (columns.empty()) throw ConfigError("table has no columns");
    if (decimals < 0 || decimals > 12) throw ConfigError("decimals must be in [0, 12]");
    for (std::size_t i = 1; i < stars.size(); ++i)
      if (!(stars[i].threshold > stars[i - 1].threshold) ||
          stars[i].marker.size() >= stars[i - 1].marker.size())
        throw ConfigError("star levels must loosen strictly with fewer markers");
    for (const auto& r : rows) {
      bool found = false;
      for (const auto& c : columns) found = found || c.result.has(r);
      if (!found) throw ConfigError("table row '" + r + "' is not in any column");
    }
  }

  std::vector<std::string> row_order() const {
    if (!rows.empty()) return rows;
    std::vector<std::string> out;
    for (const auto& c : columns)
      for (const auto& n : c.result.names)
        if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
    return out;
  }
};

namespace detail {

struct Cell {
  std::string text;
  std::optional<double> value;  // numeric content for machine-readable output
};

struct CoefCells {
  Cell coef, se;
  std::optional<double> p;
  std::string stars;
};

inline CoefCells coef_cells(const TableLayout& L, const EstimationResult& r, const std::string& name) {
  CoefCells c;
  if (!r.has(name)) return c;
  const double b = r.coefficient(name), se = r.std_error(name);
  c.p = r.p_value(name);
  c.stars = significance_stars(*c.p, L.stars);
  c.coef = {fixed(b, L.decimals), b};
  c.se = {"(" + fixed(se, L.decimals) + ")", se};
  return c;
}

inline std::string set_text(const ArConfidenceSet& s, int decimals) {
  if (s.empty()) return "empty";
  std::string out;
  for (std::size_t i = 0; i < s.intervals.size(); ++i) {
    if (i) out += " U ";
    const auto& iv = s.intervals[i];
    out += (std::isinf(iv.lower) ? "(-inf" : "[" + fixed(iv.lower, decimals)) + ", " +
           (std::isinf(iv.upper) ? "inf)" : fixed(iv.upper, decimals) + "]");
  }
  return out;
}

inline Cell footer_cell(const TableLayout& L, FooterStat s, const EstimationResult& r) {
  const auto& d = r.diagnostics;
  switch (s) {
    case FooterStat::n_obs: return {std::to_string(r.n_obs), static_cast<double>(r.n_obs)};
    case FooterStat::n_entities:
      return {std::to_string(r.n_entities), static_cast<double>(r.n_entities)};
    case FooterStat::r_squared_within:
      return {fixed(r.r_squared_within, L.decimals), r.r_squared_within};
    case FooterStat::first_stage_f:
      if (!d) return {};
      return {fixed(d->first_stage_f.statistic, L.decimals), d->first_stage_f.statistic};
    case FooterStat::underid_lm:
      if (!d) return {};
      return {fixed(d->underid_lm.p_value, L.decimals), d->underid_lm.p_value};
    case FooterStat::ar_test:
      if (!d || d->ar_tests.empty()) return {};
      return {fixed(d->ar_tests.front().p_value, L.decimals), d->ar_tests.front().p_value};
    case FooterStat::ar_set:
      if (!d || !d->ar_set) return {};
      return {set_text(*d->ar_set, L.decimals), std::nullopt};
  }
  return {};
}

inline double ar_level_of(const TableLayout& L) {
  for (const auto& c : L.columns)
    if (c.result.diagnostics && c.result.diagnostics->ar_set) return c.result.diagnostics->ar_set->level;
  return 0.95;
}

inline std::string legend(const TableLayout& L) {
  std::string out;
  for (const auto& s : L.stars) {
    if (!out.empty()) out += ", ";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", s.threshold);
    out += s.marker + " p<" + buf;
  }
  return out;
}

inline std::string covariance_note(const TableLayout& L) {
  const auto kind = L.columns.front().result.covariance.kind;
  switch (kind) {
    case CovarianceKind::classical: return "Classical standard errors in parentheses.";
    case CovarianceKind::hc1: return "Robust (HC1) standard errors in parentheses.";
    case CovarianceKind::cluster: return "Standard errors clustered by entity in parentheses.";
  }
  return {};
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::string latex_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '_': out += "\\_"; break;
      case '%': out += "\\%"; break;
      case '&': out += "\\&"; break;
      case '#': out += "\\#"; break;
      case '$': out += "\\$"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string format_text(const TableLayout& L) {
  const auto rows = L.row_order();
  std::vector<std::vector<std::string>> grid;  // first cell is the label
  std::vector<std::string> head{""};
  for (const auto& c : L.columns) head.push_back(c.label);
  grid.push_back(head);
  const std::size_t body_begin = grid.size();
  for (const auto& name : rows) {
    std::vector<std::string> coef{name}, se{""};
    for (const auto& c : L.columns) {
      auto cells = coef_cells(L, c.result, name);
      coef.push_back(cells.coef.text + cells.stars);
      se.push_back(cells.se.text);
    }
    grid.push_back(coef);
    grid.push_back(se);
  }
  const std::size_t footer_begin = grid.size();
  const double level = ar_level_of(L);
  for (auto s : L.footer) {
    std::vector<std::string> line{footer_label(s, level)};
    bool any = false;
    for (const auto& c : L.columns) {
      line.push_back(footer_cell(L, s, c.result).text);
      any = any || !line.back().empty();
    }
    if (any) grid.push_back(line);
  }

  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : grid)
    for (std::size_t j = 0; j < line.size(); ++j) width[j] = std::max(width[j], line[j].size());
  std::size_t total = 0;
  for (auto w : width) total += w + 2;

  std::ostringstream out;
  const std::string rule(total, '-');
  auto emit = [&](const std::vector<std::string>& line) {
    std::string text;
    for (std::size_t j = 0; j < line.size(); ++j) {
      const std::string pad(width[j] - line[j].size(), ' ');
      text += j == 0 ? line[j] + pad : pad + line[j];
      text += "  ";
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out << text << '\n';
  };
  out << rule << '\n';
  emit(grid[0]);
  out << rule << '\n';
  for (std::size_t i = body_begin; i < footer_begin; ++i) emit(grid[i]);
  out << rule << '\n';
  for (std::size_t i = footer_begin; i < grid.size(); ++i) emit(grid[i]);
  out << rule << '\n';
  out << covariance_note(L) << ' ' << legend(L) << '\n';
  if (!L.note.empty()) out << L.note << '\n';
  return out.str();
}

inline std::string format_csv(const TableLayout& L) {
  std::ostringstream out;
  out << "section,row,column,value,std_error,p_value,stars\n";
  for (const auto& name : L.row_order()) {
    for (const auto& c : L.columns) {
      auto cells = coef_cells(L, c.result, name);
      if (!cells.coef.value) continue;
      out << "coef," << csv_field(name) << ',' << csv_field(c.label) << ',' << cells.coef.text
          << ',' << fixed(*cells.se.value, L.decimals) << ',' << fixed(*cells.p, L.decimals)
          << ',' << cells.stars << '\n';
    }
  }
  const double level = ar_level_of(L);
  for (auto s : L.footer) {
    for (const auto& c : L.columns) {
      auto cell = footer_cell(L, s, c.result);
      if (cell.text.empty()) continue;
      out << "footer," << csv_field(footer_label(s, level)) << ',' << csv_field(c.label) << ','
          << csv_field(cell.text) << ",,,\n";
    }
  }
  return out.str();
}

inline std::string format_latex(const TableLayout& L) {
  std::ostringstream out;
  out << "\\begin{tabular}{l" << std::string(L.columns.size(), 'c') << "}\n\\hline\n";
  for (const auto& c : L.columns) out << " & " << latex_escape(c.label);
  out << " \\\\\n\\hline\n";
  for (const auto& name : L.row_order()) {
    std::ostringstream se_line;
    out << latex_escape(name);
    for (const auto& c : L.columns) {
      auto cells = coef_cells(L, c.result, name);
      out << " & " << cells.coef.text;
      if (!cells.stars.empty()) out << "$^{" << cells.stars << "}$";
      se_line << " & " << cells.se.text;
    }
    out << " \\\\\n" << se_line.str() << " \\\\\n";
  }
  out << "\\hline\n";
  const double level = ar_level_of(L);
  for (auto s : L.footer) {
    std::ostringstream line;
    bool any = false;
    for (const auto& c : L.columns) {
      auto cell = footer_cell(L, s, c.result);
      any = any || !cell.text.empty();
      line << " & " << latex_escape(cell.text);
    }
    if (any) out << latex_escape(footer_label(s, level)) << line.str() << " \\\\\n";
  }
  out << "\\hline\n";
  std::string legend_tex = legend(L);
  std::string escaped;
  for (char ch : legend_tex) escaped += ch == '<' ? std::string("$<$") : std::string(1, ch);
  out << "\\multicolumn{" << L.columns.size() + 1 << "}{l}{\\footnotesize "
      << covariance_note(L) << ' ' << escaped << "} \\\\\n";
  out << "\\end{tabular}\n";
  return out.str();
}

}  // namespace detail

inline std::string format_table(const TableLayout& layout, TableStyle style) {
  layout.validate();
  switch (style) {
    case TableStyle::text: return detail::format_text(layout);
    case TableStyle::csv: return detail::format_csv(layout);
    case TableStyle::latex: return detail::format_latex(layout);
  }
  throw ConfigError("unknown table style");
}

inline std::string format_table(const TableLayout& layout, const std::string& style) {
  return format_table(layout, parse_table_style(style));
}

}  // namespace panelkit
