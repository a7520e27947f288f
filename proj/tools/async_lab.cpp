#include <atomic>
#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include "asynclab/cli.hpp"

namespace {

std::atomic<bool> interrupted{false};

extern "C" void on_interrupt(int) { interrupted = true; }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_interrupt);
  std::vector<std::string> args(argv + 1, argv + argc);
  return asynclab::run_cli(args, std::cout, std::cerr, &interrupted);
}
