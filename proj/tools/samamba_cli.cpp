#include <iostream>

#include "samamba/cli.hpp"

int main(int argc, char** argv) {
  return samamba::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
