#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace riskgraph::cli {

enum ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kIo = 3,
  kDivergence = 4,
  kGradCheckFailed = 5,
};

inline constexpr int kReportSchemaVersion = 1;

/// Runs one command line (without the program name). Reports go to `out`,
/// diagnostics to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace riskgraph::cli
