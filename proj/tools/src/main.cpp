#include <csignal>
#include <iostream>
#include <thread>

#include "eigenprobe/cli/commands.hpp"

int main(int argc, char** argv) {
  // Block SIGINT/SIGTERM everywhere and turn them into a shutdown request on
  // a dedicated thread, so `serve` can stop its listener cleanly.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread([set] {
    int sig = 0;
    sigwait(&set, &sig);
    eigenprobe::cli::request_shutdown();
    // A second signal while shutting down kills the process.
    sigwait(&set, &sig);
    std::_Exit(128 + sig);
  }).detach();

  return eigenprobe::cli::run(argc, argv, std::cout, std::cerr);
}
