#include <iostream>
#include <string>
#include <vector>

#include "opf_resid/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return opf_resid::run_cli(args, std::cout, std::cerr);
}
