#include <iostream>
#include <string>
#include <vector>

#include "fusionshot/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fusionshot::cli::run(args, std::cout, std::cerr);
}
