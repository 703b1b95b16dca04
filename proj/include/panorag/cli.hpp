#pragma once

#include <iosfwd>

namespace panorag::cli {

/// Entry point of the `panorag` command. Returns 0 on success, 2 on an engine
/// error (its code is printed to `err`), 1 on a usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace panorag::cli
