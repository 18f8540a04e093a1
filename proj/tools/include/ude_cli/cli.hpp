#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ude::cli {

/// Exit codes of run().
inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

/// Parses argv (argv[0] is the program name), executes one subcommand and
/// returns its exit code. Failures print one line `error: <code>: <message>`
/// to `err`; usage errors follow it with the synopsis.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience overload; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ude::cli
