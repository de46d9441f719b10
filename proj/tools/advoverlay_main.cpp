#include <iostream>

#include "advoverlay/cli.hpp"

int main(int argc, char** argv) {
  return advoverlay::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
