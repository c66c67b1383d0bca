#include <iostream>
#include <string>
#include <vector>

#include "vesselkit/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return vk::run_cli(args, std::cout, std::cerr);
}
