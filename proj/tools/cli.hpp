#pragma once

#include <iosfwd>

namespace addlink::cli {

//! Process exit codes.
inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 2;
inline constexpr int exit_data = 3;
inline constexpr int exit_numerical = 4;

//! Runs `addlink <subcommand> [options]` in process. argv[0] is the program
//! name. Diagnostics go to `err`, help text to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

} // namespace addlink::cli
