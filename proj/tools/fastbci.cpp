#include <string>
#include <vector>

#include "fastbci/cli.hpp"

int main(int argc, char** argv) {
    return fastbci::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
