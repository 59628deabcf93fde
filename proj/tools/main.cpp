#include <vector>

#include "echolab/harness.hpp"

int main(int argc, char** argv) {
  return echolab::harness::cli_run(std::vector<std::string>(argv + 1, argv + argc));
}
