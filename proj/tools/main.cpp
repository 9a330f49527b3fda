#include <iostream>

#include "dispatchlab/cli.hpp"

int main(int argc, char** argv) {
  return dispatchlab::cli::run(argc, argv, std::cout, std::cerr);
}
