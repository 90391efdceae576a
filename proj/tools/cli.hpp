#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lway::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

// argv[0] is the program name. Output goes to `out`, diagnostics to `err`.
int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace lway::cli
