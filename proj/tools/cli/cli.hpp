#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fsq::cli {

/// Process exit codes. Stable for scripting.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kDataError = 3,
  kIoError = 4,
};

/// Runs the fsq command line. args[0] is the program name. Machine-readable
/// results go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fsq::cli
