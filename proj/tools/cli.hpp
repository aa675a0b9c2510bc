#pragma once

#include <string>
#include <vector>

namespace ldrps::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

/// Runs `ldrps <subcommand> ...`; args exclude the program name. Returns the exit code.
int run(const std::vector<std::string>& args);

}  // namespace ldrps::cli
