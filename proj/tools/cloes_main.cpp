#include <iostream>
#include <string>
#include <vector>

#include "cloes/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cloes::run_cli(args, std::cerr);
}
