#include <iostream>

#include "hfmf/cli.hpp"

int main(int argc, char** argv) {
  return hfmf::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
