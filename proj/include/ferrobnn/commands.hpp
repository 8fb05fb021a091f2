#pragma once

// Subcommand entry points behind the `ferrobnn` executable.
//
// Exit codes:
//   0  success
//   1  unexpected failure
//   2  invalid configuration or command line
//   3  unreadable or malformed input data
//   4  numerical failure (e.g. training divergence)

#include <string>
#include <vector>

namespace ferrobnn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace ferrobnn::cli
