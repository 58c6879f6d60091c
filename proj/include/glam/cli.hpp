#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace glam {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitIo = 1,
  kExitUsage = 2,
  kExitDivergence = 3,
  kExitVerification = 4,
};

/// Runs the command line `args` (without the program name). Normal output
/// goes to `out`, usage and error messages to `err`; progress logging goes
/// through the logger, whose level is read from GLAM_LOG.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace glam
