// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "blindspot/cli.hpp"

int main(int argc, char** argv) {
  return blindspot::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
