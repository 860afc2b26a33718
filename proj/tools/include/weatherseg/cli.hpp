#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace weatherseg {

// Process exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitNumeric = 2 };

// Runs the tool on `args` (without the program name). Normal output goes to
// `out`; usage text and the one-line "error: code=... message=..." report go
// to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace weatherseg
