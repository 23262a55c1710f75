#pragma once

#include <stdexcept>
#include <string>

namespace bmeta {

// Exit-code mapping lives in the CLI; each class corresponds to one code.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text. Carries the 1-based row and column of the bad cell.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, int row, int column)
      : ValidationError("line " + std::to_string(row) + ", column " +
                        std::to_string(column) + ": " + what),
        row_(row),
        column_(column) {}
  int row() const { return row_; }
  int column() const { return column_; }

 private:
  int row_;
  int column_;
};

class ConfigurationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bmeta
