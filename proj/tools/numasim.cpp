#include <iostream>
#include <string>
#include <vector>

#include "numasim/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return numasim::run_cli(args, std::cout, std::cerr);
}
