#include <iostream>

#include "ude_cli/cli.hpp"

int main(int argc, char** argv) { return ude::cli::run(argc, argv, std::cout, std::cerr); }
