#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfgp {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied inconsistent shapes or out-of-range arguments.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
public:
  DimensionMismatch(const std::string &what, std::size_t expected,
                    std::size_t actual)
      : InvalidArgument(what + ": expected dimension " +
                        std::to_string(expected) + ", got " +
                        std::to_string(actual)),
        expected_(expected), actual_(actual) {}

  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

private:
  std::size_t expected_;
  std::size_t actual_;
};

class InvalidHyperparameter : public InvalidArgument {
public:
  using InvalidArgument::InvalidArgument;
};

/// Raised by numerical code; the CLI maps these to exit code 3.
class NumericalError : public Error {
public:
  using Error::Error;
};

class NotPositiveDefinite : public NumericalError {
public:
  explicit NotPositiveDefinite(double last_jitter)
      : NumericalError("matrix is not positive definite (jitter cap " +
                       std::to_string(last_jitter) + " exceeded)"),
        last_jitter_(last_jitter) {}

  double last_jitter() const { return last_jitter_; }

private:
  double last_jitter_;
};

class AllRestartsFailed : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class NotNested : public InvalidArgument {
public:
  using InvalidArgument::InvalidArgument;
};

class InvalidLevelOrder : public InvalidArgument {
public:
  using InvalidArgument::InvalidArgument;
};

// Data ingestion errors.

class DataError : public Error {
public:
  using Error::Error;
};

class EmptyFile : public DataError {
public:
  explicit EmptyFile(const std::string &path)
      : DataError("empty file: " + path) {}
};

class MissingColumn : public DataError {
public:
  explicit MissingColumn(const std::string &column)
      : DataError("missing column: " + column), column_(column) {}

  const std::string &column() const { return column_; }

private:
  std::string column_;
};

class NonNumericCell : public DataError {
public:
  /// `row` is the 1-based data row (header excluded), `column` the header name.
  NonNumericCell(std::size_t row, std::string column, const std::string &cell)
      : DataError("non-numeric cell at row " + std::to_string(row) +
                  ", column '" + column + "': '" + cell + "'"),
        row_(row), column_(std::move(column)) {}

  std::size_t row() const { return row_; }
  const std::string &column() const { return column_; }

private:
  std::size_t row_;
  std::string column_;
};

class UnknownTask : public InvalidArgument {
public:
  explicit UnknownTask(const std::string &name)
      : InvalidArgument("unknown synthetic task: " + name) {}
};

} // namespace mfgp
