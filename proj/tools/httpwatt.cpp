#include <iostream>

#include "httpwatt/cli.hpp"

int main(int argc, char** argv) { return httpwatt::cli::run(argc, argv, std::cout, std::cerr); }
