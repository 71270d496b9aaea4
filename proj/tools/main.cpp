#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "noisetrans/tensor.hpp"

int main(int argc, char** argv) {
  noisetrans::configure_allocator();
  const std::vector<std::string> args(argv, argv + argc);
  return noisetrans::cli::run(args, std::cout, std::cerr);
}
