#include <iostream>

#include "maskfuse/cli.hpp"

int main(int argc, char** argv) { return maskfuse::cli_dispatch(argc, argv, std::cout, std::cerr); }
