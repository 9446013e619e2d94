#include <iostream>
#include <string>
#include <vector>

#include "asdformer/cli/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return asdformer::cli::run_cli(args, std::cout, std::cerr);
}
