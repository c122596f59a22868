#pragma once

#include <string>
#include <vector>

namespace irep {

// Entry point shared by the binary and the tests. `args` excludes argv[0].
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
int cli_main(const std::vector<std::string>& args);

}  // namespace irep
