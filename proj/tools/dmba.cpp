#include <iostream>

#include "dmba/cli.hpp"

int main(int argc, char** argv) { return dmba::run_cli(argc, argv, std::cout, std::cerr); }
