// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace pcsot {

// Entry point behind the `pcsot` binary. Exit codes: 0 ok, 2 I/O or data
// error, 3 config error, 4 checkpoint error, 1 anything else.
int run_cli(const std::vector<std::string>& args);

}  // namespace pcsot
