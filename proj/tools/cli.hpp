#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace enf::cli {

/// Runs one subcommand. Returns 0 on success, 1 on a runtime failure and 2 on
/// a usage error (unknown subcommand or flag).
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace enf::cli
