#pragma once

// Command-line front end. `run_cli` is the whole program minus process exit,
// so tests can drive it in-process.

#include <iosfwd>
#include <string>
#include <vector>

namespace cram::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kDiverged = 3, kIoError = 4, kVerificationFailed = 5 };

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cram::cli
