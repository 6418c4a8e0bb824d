#pragma once

#include <string>
#include <vector>

namespace moco::cli {

// Exit codes.
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kDataError = 2;
constexpr int kNumericalError = 3;

// Runs one subcommand. args[0] is the program name.
int dispatch(std::vector<std::string> const &args);
int dispatch(int argc, char **argv);

} // namespace moco::cli
