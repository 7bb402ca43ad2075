#pragma once

#include <string>
#include <vector>

namespace normforge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the normforge command. Progress goes to stderr.
int run_cli(int argc, char** argv);
/// Same, with args[0] as the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace normforge
