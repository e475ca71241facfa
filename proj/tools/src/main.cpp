#include "urdg_cli/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return urdg::cli::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
