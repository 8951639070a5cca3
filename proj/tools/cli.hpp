#pragma once

namespace flowgs::cli {

/// Entry point of the `flowgs` binary. Returns the process exit code; on
/// failure a JSON error record is printed to stderr and, when the command has
/// an output directory, written there as error.json.
int run(int argc, const char* const* argv);

}  // namespace flowgs::cli
