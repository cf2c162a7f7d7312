#include <iostream>

#include "dsse/cli/commands.hpp"

int main(int argc, char** argv) { return dsse::cli::run(argc, argv, std::cout, std::cerr); }
