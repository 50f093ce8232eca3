#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace buildtune::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kDataError = 2;

// Runs one subcommand. `args` excludes the program name. Results go to the
// --out file when given, otherwise to `out`; diagnostics go to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace buildtune::cli
