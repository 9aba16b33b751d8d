#pragma once

#include <string>
#include <vector>

namespace ifblend {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point of the `ifblend` tool: train | eval | infer | synth | grid | audit.
int run_cli(int argc, char** argv);

/// Same, for an argument list without the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace ifblend
