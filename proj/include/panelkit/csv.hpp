#pragma once

#include <charconv>
#include <cstdio>
#include <istream>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "panelkit/errors.hpp"

namespace panelkit::csv {

/// Splits one CSV record. Supports double-quoted fields with "" escapes;
/// embedded newlines inside quotes are not supported.
inline std::vector<std::string> split_record(std::string_view line,
                                             std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      if (!field.empty() || was_quoted)
        throw ParseError(line_no, "unexpected quote inside unquoted field");
      in_quotes = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      if (was_quoted)
        throw ParseError(line_no, "characters after closing quote");
      field.push_back(c);
    }
  }
  if (in_quotes) throw ParseError(line_no, "unterminated quoted field");
  fields.push_back(std::move(field));
  return fields;
}

/// Reads the next non-blank line, stripping CR and a leading UTF-8 BOM on
/// the first line. Returns false at end of input.
inline bool next_line(std::istream& in, std::string& line,
                      std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line.find_first_not_of(" \t") != std::string::npos) return true;
  }
  return false;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

/// Empty cell -> nullopt (missing); otherwise the full cell must parse.
inline std::optional<double> parse_double(std::string_view cell, bool& ok) {
  cell = trim(cell);
  ok = true;
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    ok = false;
    return std::nullopt;
  }
  return v;
}

inline std::optional<long long> parse_integer(std::string_view cell) {
  cell = trim(cell);
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

/// Shortest round-trippable text for a double; empty for NaN (missing).
inline std::string format_double(double v) {
  if (v != v) return {};
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return {};
  return std::string(buf, ptr);
}

inline std::string quote_if_needed(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

}  // namespace panelkit::csv
