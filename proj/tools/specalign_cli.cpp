#include <iostream>
#include <string>
#include <vector>

#include "specalign/cli/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return specalign::run_cli(args, std::cout, std::cerr);
}
