// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <string>
#include <vector>

#include "ifam/cli.hpp"

int main(int argc, char** argv) {
  ifam::cli::configure_logging();
  return ifam::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
