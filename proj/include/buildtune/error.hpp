#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace buildtune {

// Malformed or inconsistent input data (files, graphs, records). The CLI maps
// this family to exit status 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A record file line that failed to parse or validate.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DuplicateConfigurationError : public DataError {
 public:
  using DataError::DataError;
};

// The candidate space ran out before the requested number of distinct
// configurations could be drawn or selected.
class CandidateExhaustedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace buildtune
