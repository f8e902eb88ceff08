#include <iostream>

#include "taxexp/cli.hpp"

int main(int argc, char** argv) { return taxexp::cli::run(argc, argv, std::cout, std::cerr); }
