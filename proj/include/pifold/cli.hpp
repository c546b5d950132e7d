#pragma once

// The pifold command line: synth | featurize | train | design | eval | bench.

#include <iosfwd>
#include <string>
#include <vector>

namespace pifold {

// Exit statuses.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNotFound = 3;
inline constexpr int kExitData = 4;
inline constexpr int kExitNumeric = 5;

// `args` excludes the program name. Machine-readable output goes to `out`
// (or the --out path), diagnostics to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pifold
