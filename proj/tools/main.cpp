#include <iostream>
#include <string>
#include <vector>

#include "txnlink/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return txnlink::cli::run(args, std::cout, std::cerr);
}
