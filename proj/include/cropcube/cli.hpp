#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cropcube {

/// Entry point of the `cropcube` tool. args[0] is the program name.
/// Returns 0 on success, 2 on usage errors and 1 on any other failure; a
/// failure prints one "<ErrorClass>: <message>" line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace cropcube
