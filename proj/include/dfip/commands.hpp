#pragma once

#include <iosfwd>

namespace dfip {

/// Entry point of the `dfip` tool (synth, train, sample, eval).
/// Returns 0 on success, 1 on runtime or per-case errors, 2 on usage errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace dfip
