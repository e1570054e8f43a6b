#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctxalign {

// Exit codes of the ctxalign binary.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Runs one invocation. `args` excludes the program name. Data goes to `out`,
// usage and error text to `err`; logs go to stderr.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctxalign
