#include <iostream>

#include "orstereo/cli.hpp"

int main(int argc, char **argv) { return orstereo::run_cli(argc, argv, std::cout, std::cerr); }
