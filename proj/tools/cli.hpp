#pragma once

namespace excir::cli {

/// Parses argv, runs one subcommand and returns the process exit code:
/// 0 success, 1 validation error or bad usage, 2 numerical failure.
int dispatch(int argc, char** argv);

}  // namespace excir::cli
