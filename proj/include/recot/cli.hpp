#pragma once

#include <iosfwd>

namespace recot {

enum ExitCode : int {
  kExitOk = 0,
  kExitPartialFailure = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitVerification = 4,
};

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace recot
