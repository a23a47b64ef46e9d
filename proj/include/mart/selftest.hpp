#pragma once

#include <ostream>

namespace mart::selftest {

// Runs the built-in example assertions across every module, printing one
// line per check. Returns true iff all pass. Used by `mart selftest`.
bool run_all(std::ostream& out);

}  // namespace mart::selftest
