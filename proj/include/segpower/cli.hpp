#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace segpower {

/// Exit codes: 0 success, 2 usage or invalid option values, 3 data or computation failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;

/// Entry point behind the segpower executable. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace segpower
