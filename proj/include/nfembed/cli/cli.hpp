#pragma once

#include <exception>
#include <iosfwd>
#include <span>
#include <string>

namespace nfembed {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitPrerequisite = 3, kExitData = 4, kExitInternal = 5 };

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

/// Runs `nfembed <args...>` (args exclude the program name). Results go to
/// `out`, diagnostics and progress to `err`. Options not given as flags are
/// read from NFEMBED_<OPTION> environment variables, e.g. NFEMBED_SEED.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace nfembed
