#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fhvae {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable naming the directory under which runs are created
/// when --out-dir is not given (default: ./runs).
inline constexpr const char* kOutputRootEnv = "FHVAE_OUTPUT_ROOT";

/// Entry point of the command line tool. `args` excludes the program name.
/// Failures print one line "error: <Kind>: <message>" to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fhvae
