#pragma once

namespace hierssl {

inline constexpr const char* kToolName = "hierssl";
inline constexpr const char* kToolVersion = "1.0.0";

// Full command-line entry point: parses argv, dispatches to one subcommand,
// prints errors to stderr, returns the process exit code (0 only on success).
int run_cli(int argc, const char* const* argv);

}  // namespace hierssl
