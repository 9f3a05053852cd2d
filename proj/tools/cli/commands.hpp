#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cli/settings.hpp"

namespace cxr::cli {

struct Command {
  std::string name;
  std::string help;
  bool randomized = false;  // requires --seed
  std::function<void(Settings&)> declare;
  std::function<void(const Settings&, std::uint64_t seed)> run;
};

const std::vector<Command>& commands();

// Worker cap from CXRNET_THREADS (unset means no cap).
std::size_t thread_cap();

}  // namespace cxr::cli
