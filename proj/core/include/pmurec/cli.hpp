// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace pmurec::cli {

/// Runs one subcommand (gen-data, train-aux, train-stnet, evaluate,
/// baseline, ablate, online, report). Returns 0 on success, 1 on
/// validation errors (bad flags, unreadable inputs), 2 on runtime
/// failures.
int dispatch(const std::vector<std::string>& args);

}  // namespace pmurec::cli
