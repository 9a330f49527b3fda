#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

namespace dispatchlab::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kData = 3,
  kInfeasible = 4,
};

// Overrides --out-dir for every subcommand when set.
inline constexpr const char* kOutDirEnv = "DISPATCHLAB_OUT_DIR";

// Subcommands: graph, simulate, fit, advise, sweep-demo.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// FNV-1a 64-bit, rendered as 16 hex digits.
std::string config_hash(std::string_view text);

}  // namespace dispatchlab::cli
