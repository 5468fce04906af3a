#include <iostream>

#include "waning/cli.hpp"

int main(int argc, char** argv) { return waning::cli::run(argc, argv, std::cout, std::cerr); }
