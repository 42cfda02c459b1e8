#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rdnet {

// Runs one command line (args excludes the program name). Library errors are
// reported on err as "error\t<kind>\t<message>" and give exit code 1; usage
// errors give 2.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rdnet
