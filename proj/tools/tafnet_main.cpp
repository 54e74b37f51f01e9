#include <vector>

#include "tafnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tafnet::run_cli(args);
}
