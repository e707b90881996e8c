#pragma once

#include <stdexcept>
#include <string>

namespace sketchdiff {

// Base for every error raised by the library. The CLI maps subclasses to
// exit codes (usage 1, data 2, checkpoint 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid sizes, ranges or option values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition (e.g. missing g0 for the
// appearance stage).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Degenerate or otherwise unusable data (e.g. a zero-extent cloud).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file. The message names the file, line and offending field.
class ParseError : public DataError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& field,
             const std::string& what)
      : DataError(file + ":" + std::to_string(line) + ": field '" + field + "': " + what),
        file_(file),
        line_(line),
        field_(field) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string file_;
  std::size_t line_;
  std::string field_;
};

// Missing, corrupt or mismatched checkpoint.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace sketchdiff
