#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return volcnn::cli::run(argc, argv, std::cout, std::cerr); }
