#include <iostream>

#include "ctmcgrid/cli.hpp"

int main(int argc, char** argv) { return ctmcgrid::cli::run_cli(argc, argv, std::cout, std::cerr); }
