#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace anderson {

inline constexpr int kSchemaVersion = 1;

/// Entry point of anderson_lab. `args` excludes the program name. Returns
/// the process exit code: 0 on success, 2 on configuration errors, 3 on
/// numerical failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace anderson
