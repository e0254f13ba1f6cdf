#include "slimpart/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "slimpart/rsrc.hpp"

namespace slimpart::pipeline {

namespace {

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

attribution::Analysis analyze_log(const trace::ExecutionLog& el, const AnalyzeOptions& opts) {
  auto g0 = rsrc::init_state(opts.root_cwd, opts.root_exe);
  return attribution::attribute(el, g0);
}

AnalyzeResult analyze(const AnalyzeOptions& opts) {
  auto t0 = std::chrono::steady_clock::now();
  AnalyzeResult r;
  auto el = trace::load_execution_log(opts.traces, opts.load, &r.load);
  r.analysis = analyze_log(el, opts);
  r.seconds = since(t0);
  return r;
}

PlanResult plan(const attribution::Analysis& a, const partition::Policy& policy,
                const placement::MetadataSource& source) {
  auto t0 = std::chrono::steady_clock::now();
  PlanResult r;
  r.partition = partition::partition(a.graph.nodes, a.graph, policy);
  r.names = partition::container_names(r.partition.map, policy);
  placement::PlanOptions opts;
  opts.names = r.names;
  opts.entry_argv = a.entry_argv;
  opts.entry_exe = a.entry_exe;
  r.plan = placement::plan_placement(r.partition.map, a.profiles, r.partition.map.blocked, source, a.deleted, opts);
  for (const auto& [x, y] : r.partition.map.unsatisfied) {
    r.plan.warnings.push_back("unsatisfied co-location constraint: " + x + " with " + y);
  }
  r.seconds = since(t0);
  return r;
}

std::string summary(const PlanResult& r) {
  std::ostringstream s;
  std::size_t max_r = 0;
  s << r.plan.containers.size() << " container(s)\n";
  for (const auto& c : r.plan.containers) {
    max_r = std::max(max_r, c.resources);
    s << "  " << c.name << ": " << c.exes.size() << " exe(s), " << c.resources << " resources (" << c.reads
      << " read, " << c.writes << " written), " << c.files.size() << " files, " << c.volumes.size()
      << " volume(s), " << c.stubs.size() << " stub(s)" << (c.rpe_server ? ", rpe server" : "") << "\n";
    for (const auto& e : c.exes) s << "    " << e << "\n";
  }
  for (const auto& v : r.plan.volumes) {
    s << "  volume " << v.key << " at " << v.mount << " shared by";
    for (int c : v.containers) s << " " << r.plan.containers[static_cast<std::size_t>(c)].name;
    s << "\n";
  }
  if (r.plan.shared_net) s << "  shared network namespace\n";
  for (const auto& [from, to] : r.partition.map.blocked) s << "  rpe: " << from << " -> " << to << "\n";
  s << "max |R(C_i)| = " << max_r << "\n";
  for (const auto& w : r.plan.warnings) s << "warning: " << w << "\n";
  return s.str();
}

}  // namespace slimpart::pipeline
