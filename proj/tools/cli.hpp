#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cvr::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;
inline constexpr int kCheckFailed = 3;

// Runs one command. `args` excludes the program name. Reports go to `out`;
// errors go to `err` as one line starting with "error[<kind>]: ".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cvr::cli
