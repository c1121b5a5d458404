#include <iostream>
#include <string>
#include <vector>

#include "hyperinv/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return hyperinv::run(args, std::cout, std::cerr);
}
