#include <iostream>

#include "ragcfg/cli.hpp"

int main(int argc, char** argv) { return ragcfg::run_cli(argc, argv, std::cout, std::cerr); }
