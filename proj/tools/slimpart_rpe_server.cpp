#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include "slimpart/rpe.hpp"

// Kept free of the CLI parser so the static binary stays small.
// Usage: slimpart-rpe-server --listen <socket> [--verbose] [-- command...]
int main(int argc, char** argv) {
  slimpart::rpe::ServerOptions opts;
  std::vector<std::string> command;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--listen") == 0 && i + 1 < argc) {
      opts.socket_path = argv[++i];
    } else if (std::strcmp(argv[i], "--verbose") == 0) {
      opts.verbose = true;
    } else if (std::strcmp(argv[i], "--") == 0) {
      command.assign(argv + i + 1, argv + argc);
      break;
    } else {
      std::cerr << "usage: slimpart-rpe-server --listen <socket> [--verbose] [-- command...]\n";
      return 1;
    }
  }
  if (opts.socket_path.empty()) {
    std::cerr << "slimpart-rpe-server: --listen is required\n";
    return 1;
  }
  try {
    return slimpart::rpe::run_server(opts, command);
  } catch (const std::exception& e) {
    std::cerr << "slimpart-rpe-server: " << e.what() << "\n";
    return 1;
  }
}
