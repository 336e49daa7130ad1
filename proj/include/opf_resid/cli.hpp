#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace opf_resid {

/// Exit codes of the command-line tool.
enum ExitCode : int { exit_ok = 0, exit_domain_error = 1, exit_usage = 2 };

/// Runs the `opf-resid` command line. `args` excludes the program name.
/// JSON goes to --out or `out`; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace opf_resid
