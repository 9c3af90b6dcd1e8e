// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "fedsim/cli/commands.hpp"

int main(int argc, char** argv) { return fedsim::cli::run_cli(argc, argv, std::cout, std::cerr); }
