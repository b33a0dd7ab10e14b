#pragma once

#include <iosfwd>

namespace dub3d {

enum ExitCode { kExitOk = 0, kExitUsage = 2, kExitConfig = 3, kExitData = 4, kExitInternal = 5 };

// Runs one subcommand. Errors become a single "dub3d: error[<kind>]: <message>" line on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dub3d
