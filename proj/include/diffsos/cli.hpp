#pragma once

#include <string>
#include <vector>

namespace diffsos {

/// Exit codes of the command-line front end.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitIo = 3,
    kExitCheckpoint = 4,
};

/// Entry point for `diffsos simulate | train | sample | evaluate`. args[0] is the program name.
int run_cli(const std::vector<std::string>& args);

} // namespace diffsos
