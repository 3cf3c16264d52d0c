#pragma once

#include <iosfwd>

namespace unmix::cli {

/// Stable process exit codes.
enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kFormat = 4 };

/// Parses argv and dispatches to train / eval / sweep / inspect.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace unmix::cli
