#include "rotlab/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return rotlab::cli::run(argc, argv, std::cout, std::cerr); }
