#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bnnfer::cli {

enum ExitCode : int {
    kSuccess = 0,
    kValidationError = 1,
    kIoError = 2,
    kTrainingError = 3,
};

// Entry point of the `bnnfer` tool. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bnnfer::cli
