#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gist::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kIoError = 3,
  kDivergence = 4,
  kArtifactMismatch = 5,
};

/// Entry point of the gistlab tool; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gist::cli
