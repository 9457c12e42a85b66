// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "blindspot/errors.hpp"

namespace blindspot {

/// Process exit status for an error class. 0 is success, 1 is anything not
/// covered by ErrorCode.
int exit_code_for(ErrorCode code);

/// Text listing every exit status, shown in --help.
std::string exit_code_help();

/// Entry point of the command-line tool. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace blindspot
