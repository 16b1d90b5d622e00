#include <iostream>

#include "sitsfuse/cli.hpp"

int main(int argc, char** argv) {
  return sitsfuse::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
