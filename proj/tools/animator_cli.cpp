#include <iostream>
#include <string>
#include <vector>

#include "animator/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return animator::dispatch(args, std::cout, std::cerr);
}
