#include <iostream>

#include "clcagan/cli/commands.hpp"

int main(int argc, char** argv) { return clcagan::cli::run(argc, argv, std::cout, std::cerr); }
