#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace unidual {

/// Runs one CLI invocation (subcommands: synth, train, eval, convert,
/// gradcheck, inspect). Results go to `out`, diagnostics to `err`.
/// Returns 0 on success, 1 on validation/usage errors, 2 on runtime
/// failures (non-finite loss, corrupt checkpoints, ...).
int cmd_dispatch(const std::vector<std::string>& args, std::ostream& out,
                 std::ostream& err);

/// The config-key enumeration appended to --help.
std::string cli_help_footer();

}  // namespace unidual
