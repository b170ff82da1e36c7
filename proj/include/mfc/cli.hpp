#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mfc {

enum ExitCode { kExitOk = 0, kExitCheckFailed = 1, kExitConfigError = 2 };

/// Runs one subcommand; `args` excludes the program name. Reports go to
/// the --out directory, a summary to `out`, diagnostics to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mfc
