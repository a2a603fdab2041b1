#include <string>
#include <vector>

#include "diffsos/cli.hpp"

int main(int argc, char** argv) {
    return diffsos::run_cli(std::vector<std::string>(argv, argv + argc));
}
