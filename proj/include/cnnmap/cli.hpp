#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cnnmap {

/// Exit codes: 0 success, 1 usage error, 2 data/format error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one subcommand (synth | train | eval | experiment | inspect).
/// `args` excludes the program name. A `--config FILE` of key=value lines
/// supplies defaults that explicit flags override.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cnnmap
