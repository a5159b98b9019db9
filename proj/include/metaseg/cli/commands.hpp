#pragma once

#include <exception>
#include <iosfwd>

namespace metaseg::cli {

// Entry point of the `metaseg` tool. Returns the process exit code:
// 0 success, 1 validation error (bad config, shapes, files), 2 runtime or
// numerical error, including failed verification checks.
int run(int argc, const char* const* argv);

int exit_code_for(const std::exception& error);

}  // namespace metaseg::cli
