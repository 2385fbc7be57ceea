#include <iostream>

#include "trajdist/cli.hpp"

int main(int argc, char** argv) { return trajdist::cli_main(argc, argv, std::cout, std::cerr); }
