#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gaqp {

/// Exit codes returned by run_cli.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitCertification = 4;

/// Runs the command line; `args` excludes the program name. `in` feeds the query REPL.
int run_cli(const std::vector<std::string> &args, std::istream &in, std::ostream &out, std::ostream &err);

} // namespace gaqp
