#pragma once
// Command-line front end: synth, train, eval, calibrate, explain, ablate.

#include <ostream>
#include <string>
#include <vector>

namespace hfmf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // runtime or I/O failure
inline constexpr int kExitUsage = 2;    // bad flags or invalid configuration

/// Runs one command. `args` excludes the program name. Never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hfmf
