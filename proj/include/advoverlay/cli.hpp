#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace advoverlay {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `advoverlay` executable. args excludes the program
/// name. Listings and summaries go to out, diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace advoverlay
