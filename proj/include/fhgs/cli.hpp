#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fhgs {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
};

/// Runs the `fhgs` command line (argv[0] excluded) writing normal output to
/// `out` and diagnostics to `err`. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Full help text of one subcommand ("" for the top level).
std::string cli_help(const std::string& subcommand);

}  // namespace fhgs
