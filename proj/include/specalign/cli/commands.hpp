#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace specalign {

/// Entry point of the `specalign` tool. `args` excludes the program name. Reports go to
/// `out`, diagnostics to `err`; returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace specalign
