#include <iostream>
#include <string>
#include <vector>

#include "qrkit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return qrkit::run_cli(args, std::cout, std::cerr);
}
