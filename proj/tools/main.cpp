#include <string>
#include <vector>

#include "spectral/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return spectral::run_cli(args);
}
