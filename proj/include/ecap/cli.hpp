#pragma once

#include <ostream>

namespace ecap::cli {

enum ExitCode : int {
    kOk = 0,
    kInputError = 2,
    kEmptyResult = 3,
    kNumericFailure = 4,
};

/// Entry point of the command-line tool. Output without --output goes to `out`,
/// diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ecap::cli
