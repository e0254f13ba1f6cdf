// Installed at the path of an executable that lives in another container.
// Forwards the invocation to that container's RPE server and mirrors the
// remote process's fate.
#include <iostream>

#include "slimpart/rpe.hpp"

extern char** environ;

int main(int argc, char** argv) {
  auto target = slimpart::rpe::locate_target(environ);
  if (!target) {
    std::cerr << "slimpart-stub: no RPE target configured for this executable\n";
    return 127;
  }
  return slimpart::rpe::run_stub(*target, argc, argv, environ);
}
