// SPDX-License-Identifier: Apache-2.0
#include <vector>

#include "pmurec/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pmurec::cli::dispatch(args);
}
