#include <iostream>

#include "dfm/cli.hpp"

int main(int argc, char** argv) { return dfm::run_cli(argc, argv, std::cout, std::cerr); }
