#include <string>
#include <vector>

#include "irep/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return irep::cli_main(args);
}
