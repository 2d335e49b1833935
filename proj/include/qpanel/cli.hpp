#pragma once

#include <iosfwd>

namespace qpanel::cli {

//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace qpanel::cli
