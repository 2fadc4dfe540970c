#include "spherediff/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return spherediff::cli_dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
