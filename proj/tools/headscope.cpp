// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "headscope/commands.hpp"

int main(int argc, char** argv) { return headscope::run_cli(argc, argv, std::cout, std::cerr); }
