#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tamms::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `tamms` binary. `args` excludes the program name.
// Returns the process exit code: 0 success, 1 runtime or validation failure,
// 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tamms::cli
