#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "sonoscan/error.hpp"

namespace sonoscan {

/// The program could not be started (missing, not executable).
class CommandNotFoundError : public ExternalCommandError {
 public:
  explicit CommandNotFoundError(const std::string& what) : ExternalCommandError(what, {}) {}
};

struct ProcessResult {
  int exit_code = 0;  // 128 + signal number when killed by a signal
  std::string stdout_text;
  std::string stderr_text;
};

/// Splits a command string on whitespace, honoring single and double quotes.
/// "ocr.sh --psm 6" -> {"ocr.sh", "--psm", "6"}.
std::vector<std::string> split_command(const std::string& command);

/// Runs argv[0] (PATH lookup applies) with stdin fed from `input`, capturing
/// stdout and stderr. Throws CommandNotFoundError if the program cannot be
/// started and ExternalCommandError if the timeout expires; a nonzero exit
/// is reported in the result.
ProcessResult run_process(const std::vector<std::string>& argv, const std::string& input = {},
                          std::optional<std::chrono::milliseconds> timeout = std::nullopt);

}  // namespace sonoscan
