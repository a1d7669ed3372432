#include <iostream>

#include "oflw3/cli.hpp"

int main(int argc, char** argv) { return oflw3::cli::run(argc, argv, std::cout, std::cerr); }
