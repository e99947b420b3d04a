#pragma once

#include <string>
#include <vector>

namespace rgmm::cli {

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "RGMM_CONFIG";

// Exit statuses: 0 success, 1 unexpected failure, 2 usage error (unknown
// subcommand, bad flag), and 3..11 for rgmm::ErrorCode values.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

int run(int argc, const char* const* argv);
/// Same as above with `args` excluding the program name.
int run(const std::vector<std::string>& args);

}  // namespace rgmm::cli
