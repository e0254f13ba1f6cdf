#include "slimpart/attribution.hpp"

#include <sstream>

namespace slimpart::attribution {

namespace {

bool is_exec(const trace::SyscallEvent& e) { return e.name == "execve" || e.name == "execveat"; }

bool is_fork(const trace::SyscallEvent& e) {
  return e.name == "clone" || e.name == "clone3" || e.name == "fork" || e.name == "vfork";
}

}  // namespace

std::set<Edge> CallGraph::edge_set() const {
  std::set<Edge> out;
  for (const auto& [e, n] : edges) out.insert(e);
  return out;
}

std::vector<std::string> string_array(std::string_view text) {
  std::vector<std::string> out;
  if (text.size() < 2 || text.front() != '[') return out;
  for (auto& a : trace::parse_args(text.substr(1, text.size() - 2))) {
    if (a.kind == trace::ArgKind::String) out.push_back(std::move(a.text));
  }
  return out;
}

Analysis attribute(const trace::ExecutionLog& el, const rsrc::SystemState& g0) {
  Analysis out;
  if (!g0.root_exe.empty()) {
    out.graph.nodes.insert(g0.root_exe);
    auto& root = out.profiles[g0.root_exe];
    root.exe = g0.root_exe;
    root.reads.insert(rsrc::Resource::file(g0.root_exe));
    out.entry_exe = g0.root_exe;
    out.entry_argv = {g0.root_exe};
  }
  for (std::size_t li = 0; li < el.logs.size(); ++li) {
    rsrc::SystemState st = g0;
    std::map<std::int64_t, std::size_t> proc_index;
    auto process_of = [&](std::int64_t tid) -> ProcessNode& {
      auto it = proc_index.find(tid);
      if (it == proc_index.end()) {
        ProcessNode n{li, tid, st.knows(tid) ? st.procs.at(tid).parent : 0, {}};
        auto exe = st.knows(tid) ? st.procs.at(tid).exe : st.root_exe;
        if (!exe.empty()) n.exes.push_back(exe);
        out.processes.push_back(std::move(n));
        it = proc_index.emplace(tid, out.processes.size() - 1).first;
      }
      return out.processes[it->second];
    };

    for (const auto& e : el.logs[li]) {
      const std::string before = st.knows(e.tid) ? st.procs.at(e.tid).exe : st.root_exe;
      if (st.knows(e.tid)) process_of(e.tid);
      auto delta = rsrc::apply_event(st, e, &out.diagnostics);
      if (before.empty()) {
        out.unattributed.merge(delta);
      } else {
        auto& prof = out.profiles[before];
        prof.exe = before;
        prof.reads.insert(delta.reads.begin(), delta.reads.end());
        prof.writes.insert(delta.writes.begin(), delta.writes.end());
      }
      if (e.failed() || !st.knows(e.tid)) continue;
      const bool fresh = !proc_index.count(e.tid);
      auto& node = process_of(e.tid);
      if (is_exec(e)) {
        const std::string& after = st.procs.at(e.tid).exe;
        out.graph.nodes.insert(after);
        auto& prof = out.profiles[after];
        prof.exe = after;
        prof.reads.insert(rsrc::Resource::file(after));
        if (!before.empty()) {
          ++out.graph.edges[{before, after}];
        }
        if (out.entry_exe.empty()) {
          out.entry_exe = after;
          const std::size_t argv_idx = e.name == "execveat" ? 2 : 1;
          if (argv_idx < e.args.size()) out.entry_argv = string_array(e.args[argv_idx].text);
          if (out.entry_argv.empty()) out.entry_argv = {after};
        }
        if (!fresh) node.exes.push_back(after);
      } else if (is_fork(e) && e.ret > 0 && st.knows(e.ret)) {
        process_of(e.ret);
      }
    }
    out.deleted.insert(st.tombstones.begin(), st.tombstones.end());
  }
  out.unattributed.deleted.clear();
  return out;
}

std::set<std::string> executables(const trace::ExecutionLog& el, const rsrc::SystemState& g0) {
  return attribute(el, g0).graph.nodes;
}

std::string report(const Analysis& a) {
  std::ostringstream os;
  os << "executables: " << a.graph.nodes.size() << "\n";
  for (const auto& exe : a.graph.nodes) {
    const auto it = a.profiles.find(exe);
    std::size_t r = it == a.profiles.end() ? 0 : it->second.reads.size();
    std::size_t w = it == a.profiles.end() ? 0 : it->second.writes.size();
    os << "  " << exe << "  reads=" << r << " writes=" << w << "\n";
  }
  os << "call graph edges: " << a.graph.edges.size() << "\n";
  for (const auto& [edge, n] : a.graph.edges) {
    os << "  " << edge.first << " -> " << edge.second << "  x" << n << "\n";
  }
  if (!a.entry_argv.empty()) {
    os << "entry:";
    for (const auto& s : a.entry_argv) os << ' ' << s;
    os << "\n";
  }
  if (!a.deleted.empty()) os << "deleted at end of run: " << a.deleted.size() << "\n";
  const auto& d = a.diagnostics;
  if (d.unknown_tids || d.unresolvable_dirfd || !d.unhandled.empty()) {
    os << "diagnostics: unknown-tids=" << d.unknown_tids
       << " unresolvable-dirfd=" << d.unresolvable_dirfd << " unhandled-calls=" << d.unhandled.size()
       << "\n";
    for (const auto& [name, n] : d.unhandled) os << "  unhandled " << name << " x" << n << "\n";
  }
  return os.str();
}

}  // namespace slimpart::attribution
