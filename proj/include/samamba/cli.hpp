#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace samamba {

/// Runs the command-line front end. `args` excludes the program name.
/// Returns the process exit code; never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace samamba
