#include <iostream>

#include "baa/cli/app.hpp"

int main(int argc, char** argv) { return baa::cli::run(argc, argv, std::cout, std::cerr); }
