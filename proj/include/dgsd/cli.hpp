#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dgsd::cli {

/// Exit codes: 0 success, 1 runtime failure ("error[<kind>]: ..." on `err`),
/// 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// `args[0]` is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace dgsd::cli
