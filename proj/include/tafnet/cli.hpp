#pragma once

#include <string>
#include <vector>

namespace tafnet {

// Entry point behind the tafnet binary; also callable in-process by tests.
// Exit codes: 0 success, 1 validation error, 2 numerical failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace tafnet
