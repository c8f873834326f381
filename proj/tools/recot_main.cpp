#include <iostream>

#include "recot/cli.hpp"

int main(int argc, char** argv) { return recot::run_cli(argc, argv, std::cout, std::cerr); }
