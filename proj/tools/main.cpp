#include "blend/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return blend::cli::run(argc, argv, std::cout, std::cerr); }
