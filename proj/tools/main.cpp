#include <iostream>

#include "dub3d/cli.hpp"

int main(int argc, char** argv) { return dub3d::run_cli(argc, argv, std::cout, std::cerr); }
