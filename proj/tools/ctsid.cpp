#include "ctsid/cli.hpp"

int main(int argc, char** argv) {
  return ctsid::cli::run(argc, argv, ctsid::cli::process_environment(), std::cout, std::cerr);
}
