// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ifam::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,         // unexpected runtime error
  kUsage = 2,           // unknown subcommand or flag, missing option
  kBadConfig = 3,       // malformed JSON, unknown key, invalid plan
  kBadCheckpoint = 4,   // bad magic, version or checksum
  kIoError = 5,         // missing or unreadable file or directory
};

/// Runs one command. `args` excludes the program name. Results go to `out`,
/// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Applies IFAM_LOG (error, info, debug; default info) to the default logger,
/// which writes to stderr.
void configure_logging();

}  // namespace ifam::cli
