#include <iostream>

#include "wflux/cli.hpp"

int main(int argc, char** argv) { return wflux::cli::run(argc, argv, std::cout, std::cerr); }
