#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace invmahal::cli {

/// Runs the command line in-process. Exit codes: 0 success, 1 runtime
/// failure, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace invmahal::cli
