#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace iris::cli {

enum ExitCode { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

/// Runs one `iris` command line. Normal output goes to `out`; the single-line error to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace iris::cli
