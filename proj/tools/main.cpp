// SPDX-License-Identifier: Apache-2.0
#include "robustseq/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return robustseq::run_cli(argc, argv, std::cout, std::cerr); }
