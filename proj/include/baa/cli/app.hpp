#pragma once

#include <ostream>

namespace baa::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,            // anything not listed below
  kConfigError = 2,        // bad config file, key, value or command line
  kIoError = 3,            // unreadable or unwritable files, malformed artifacts
  kMissingCheckpoint = 4,  // an upstream training run has not been done
  kDiverged = 5,           // divergence guard fired; state dumped
};

int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace baa::cli
