#include <iostream>
#include <string>
#include <vector>

#include "cram/cli.hpp"
#include "cram/kernels.hpp"

int main(int argc, char** argv) {
  cram::kernels::configure_from_env();
  std::vector<std::string> args(argv + 1, argv + argc);
  return cram::cli::run_cli(args, std::cout, std::cerr);
}
