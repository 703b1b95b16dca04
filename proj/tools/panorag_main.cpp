#include <iostream>

#include "panorag/cli.hpp"

int main(int argc, char** argv) { return panorag::cli::run(argc, argv, std::cout, std::cerr); }
