#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tumordet {

// Environment variable that, when set, replaces every --data argument.
inline constexpr const char* kDataDirEnv = "TUMORDET_DATA";

// Subcommands gen-data, train, eval and ablate. `args` excludes the program
// name. Returns 0 on success; diagnostics go to `err`.
int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tumordet
