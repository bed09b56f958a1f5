#include <iostream>

#include "sgdstat/cli.hpp"

int main(int argc, char** argv) { return sgdstat::cli::run(argc, argv, std::cout, std::cerr); }
