// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace robustseq {

/// Command-line entry point: gen, train, eval, predict, gradcheck, sweep.
/// Returns 0 on success, 1 on validation errors (bad flags or data), 2 on
/// runtime failures (I/O, numerical failure, gradient check over tolerance).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace robustseq
