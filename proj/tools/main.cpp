#include <iostream>

#include "dfip/commands.hpp"

int main(int argc, char** argv) { return dfip::run_cli(argc, argv, std::cout, std::cerr); }
