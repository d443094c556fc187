#pragma once

#include <ostream>

namespace sgq::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kInfeasible = 3,
};

/// Parses argv and runs one subcommand (synth, train, quantize-eval, search, report).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sgq::cli
