#include <iostream>

#include "transgcn/cli.hpp"

int main(int argc, char** argv) { return transgcn::cli::run_cli(argc, argv, std::cout, std::cerr); }
