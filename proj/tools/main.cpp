#include <iostream>

#include "ecap/cli.hpp"

int main(int argc, char** argv) { return ecap::cli::run(argc, argv, std::cout, std::cerr); }
