#include <iostream>
#include <vector>

#include "unidual/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return unidual::cmd_dispatch(args, std::cout, std::cerr);
}
