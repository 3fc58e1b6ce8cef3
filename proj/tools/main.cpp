#include "osld/cli.hpp"

int main(int argc, char** argv) {
  return osld::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
