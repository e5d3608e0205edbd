#pragma once

#include <iosfwd>

namespace seqtriage::cli {

// Exit codes
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNotConverged = 3;
inline constexpr int kExitIo = 4;

// Entry point of the `seqtriage` executable. Subcommands: simulate, fit,
// study, predict, serve.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace seqtriage::cli
