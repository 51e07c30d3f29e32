#pragma once

#include <stdexcept>
#include <string>

namespace sonoscan {

/// Failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorCategory {
  config,    // bad flags, out-of-range thresholds, unresolvable paths
  data,      // malformed or inconsistent input files
  external,  // an external OCR/correction/upscale command failed
  internal,
};

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
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class ExternalCommandError : public Error {
 public:
  ExternalCommandError(const std::string& what, std::string stderr_text)
      : Error(ErrorCategory::external, what), stderr_(std::move(stderr_text)) {}

  const std::string& stderr_text() const noexcept { return stderr_; }

 private:
  std::string stderr_;
};

}  // namespace sonoscan
