#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace panelkit {

/// Broad failure category. The CLI maps each one to an exit code.
enum class ErrorCategory { config, data, estimation, internal };

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::data: return "data";
    case ErrorCategory::estimation: return "estimation";
    case ErrorCategory::internal: return "internal";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what)
      : Error(ErrorCategory::data, what) {}
};

/// Malformed CSV input; line is 1-based and counts the header.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DuplicateObservationError : public DataError {
 public:
  using DataError::DataError;
};

class CellTypeError : public DataError {
 public:
  using DataError::DataError;
};

class EstimationError : public Error {
 public:
  explicit EstimationError(const std::string& what)
      : Error(ErrorCategory::estimation, what) {}
};

/// The design matrix is rank deficient. `columns` is a minimal set of
/// design columns that are linearly dependent.
class CollinearityError : public EstimationError {
 public:
  explicit CollinearityError(std::vector<std::string> columns)
      : EstimationError(make_message(columns)), columns_(std::move(columns)) {}

  const std::vector<std::string>& columns() const noexcept { return columns_; }

 private:
  static std::string make_message(const std::vector<std::string>& cols) {
    std::string msg = "collinear design columns: {";
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) msg += ", ";
      msg += cols[i];
    }
    return msg + "}";
  }
  std::vector<std::string> columns_;
};

class DegenerateInstrumentError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

/// Warnings go through a replaceable sink (stderr by default) so tests can
/// capture them.
using WarningSink = std::function<void(std::string_view)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](std::string_view msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(std::string_view msg) {
  if (auto& sink = warning_sink()) sink(msg);
}

}  // namespace panelkit
