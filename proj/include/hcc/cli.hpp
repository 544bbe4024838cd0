#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hcc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command. `args` excludes the program name. Returns 0 on success,
/// 1 for data errors and 2 for usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hcc
