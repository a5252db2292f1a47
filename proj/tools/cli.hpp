#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace covexplain::cli {

// Exit statuses: 0 success, 1 usage error, 2 data or runtime error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// args[0] is the program name.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace covexplain::cli
