#include <iostream>

#include "vqfuzz/cli/commands.hpp"

int main(int argc, char** argv) { return vqfuzz::cli::run(argc, argv, std::cout, std::cerr); }
