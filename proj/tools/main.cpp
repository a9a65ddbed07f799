#include <iostream>

#include "avsd/cli.hpp"

int main(int argc, char** argv) {
  return avsd::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
