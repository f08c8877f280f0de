#pragma once

#include <ostream>

namespace coefflab::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kAssertionFailed = 2, kInconclusive = 3 };

/// Entry point shared by the binary and the tests. argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace coefflab::cli
