#include <iostream>
#include <string>
#include <vector>

#include "lremap/driver.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return lremap::run_cli(args, std::cout, std::cerr);
}
