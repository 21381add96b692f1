#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gft::cli {

/// Process exit codes, one per error class.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,          ///< unexpected internal error
  kUsage = 2,            ///< bad flags or inconsistent configuration
  kInputError = 3,       ///< unreadable corpus, image or config file
  kCheckpointError = 4,  ///< checkpoint missing, corrupt or incompatible
  kGradcheckFailed = 5,
  kDiverged = 6,
};

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gft::cli
