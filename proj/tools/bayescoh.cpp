#include <iostream>

#include "bayescoh/cli.hpp"

int main(int argc, char** argv) {
  return bayescoh::run_cli(argc, argv, std::cout, std::cerr);
}
