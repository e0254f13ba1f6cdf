#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "slimpart/rsrc.hpp"
#include "slimpart/trace.hpp"

namespace slimpart::attribution {

struct ExeProfile {
  std::string exe;
  rsrc::ResourceSet reads;
  rsrc::ResourceSet writes;

  bool operator==(const ExeProfile&) const = default;
};

using Edge = std::pair<std::string, std::string>;

// Executable-level call graph. Edge weights count successful execve events.
struct CallGraph {
  std::set<std::string> nodes;
  std::map<Edge, std::size_t> edges;

  std::set<Edge> edge_set() const;
  bool operator==(const CallGraph&) const = default;
};

struct ProcessNode {
  std::size_t log = 0;
  std::int64_t tid = 0;
  std::int64_t parent = 0;
  std::vector<std::string> exes;  // executables in the order they were run
};

struct Analysis {
  std::map<std::string, ExeProfile> profiles;
  CallGraph graph;
  std::vector<ProcessNode> processes;
  // Deltas issued before the first execve of a launcher process (Gamma_0 with
  // no root executable).
  rsrc::EffectDelta unattributed;
  std::set<std::string> deleted;
  // argv of the first executable started by the trace; the partitioned
  // system's entry point.
  std::vector<std::string> entry_argv;
  std::string entry_exe;
  rsrc::Diagnostics diagnostics;
};

// Folds every log from g0, crediting each event's delta to the executable the
// issuing tid was running when it made the call.
Analysis attribute(const trace::ExecutionLog& el, const rsrc::SystemState& g0);

// Successful execve targets plus the root executable (if Gamma_0 names one).
std::set<std::string> executables(const trace::ExecutionLog& el, const rsrc::SystemState& g0);

// Human-readable listing used to author policies.
std::string report(const Analysis& a);

// Decodes a strace string array ("[\"sh\", \"-c\", ...]").
std::vector<std::string> string_array(std::string_view text);

}  // namespace slimpart::attribution
