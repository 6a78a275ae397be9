#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "promptforge/providers.hpp"

namespace promptforge {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kProvider = 3;
inline constexpr int kData = 4;
}  // namespace exit_code

struct CliIo {
  std::ostream& out;
  std::ostream& err;
  // Replaces the remote provider (tests). --script still takes precedence.
  ProviderFactory factory;
};

/// Runs one invocation; `args` excludes the program name. Returns the exit code.
int run_cli(const std::vector<std::string>& args, const CliIo& io);

}  // namespace promptforge
