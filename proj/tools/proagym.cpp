#include <iostream>

#include "proagym/cli.hpp"

int main(int argc, char** argv) { return proagym::cli_dispatch(argc, argv, std::cout, std::cerr); }
