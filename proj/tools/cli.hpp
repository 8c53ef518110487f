#pragma once

#include <ostream>

namespace invcode::cli {

enum ExitCode : int {
  kOk = 0,
  kValidation = 2,
  kRuntime = 3,
  kUsage = 64,
  kMissingInput = 66,
};

/// Parses argv and runs one subcommand. JSON goes to `out`, diagnostics to
/// `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace invcode::cli
