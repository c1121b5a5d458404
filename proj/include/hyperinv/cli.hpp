#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace hyperinv {

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2 };

/// Command-line entry point. `args` excludes the program name; args[0] is
/// the command.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace hyperinv
