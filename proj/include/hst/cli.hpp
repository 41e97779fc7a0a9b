#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace hst {

// Exit codes: 0 success, 1 user error, 2 internal error. Metrics go to `out`
// as key=value lines, diagnostics to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace hst
