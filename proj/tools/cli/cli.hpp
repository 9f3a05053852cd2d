#pragma once

#include <string>
#include <vector>

namespace cxr::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kData = 3;
inline constexpr int kNumerical = 4;

int run(int argc, char** argv);
// args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace cxr::cli
