// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   slimpart_acceptance                       run every criterion
//   slimpart_acceptance 3 7                   run only the listed criteria
//   slimpart_acceptance --write-expected FILE regenerate the Mediawiki plan
#include <fcntl.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "placement_oracle.hpp"
#include "process.hpp"
#include "slimpart/emit.hpp"
#include "slimpart/partition.hpp"
#include "slimpart/pipeline.hpp"
#include "slimpart/placement.hpp"

using namespace slimpart;
using rsrc::Resource;
using rsrc::ResourceSet;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr int kPartitionInstances = 1000;
constexpr double kPartitionBudgetSeconds = 10.0;
constexpr int kPlacementCases = 500;
constexpr double kSizeTolerance = 0.01;
constexpr std::size_t kThroughputEvents = 1000000;
constexpr double kThroughputTarget = 30.0;
constexpr double kThroughputHardLimit = 60.0;
constexpr double kRpeMedianLimitMs = 25.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

// Least-squares slope of y over x.
double slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  return num / den;
}

attribution::Analysis analyze_file(const std::string& path) {
  pipeline::AnalyzeOptions o;
  o.traces = {path};
  return pipeline::analyze(o).analysis;
}

// ---------------------------------------------------------------------------
// 1. Partition oracle equivalence

Outcome partition_oracle() {
  std::mt19937_64 rng(1);
  int agree = 0, in_saturations = 0, order_sensitive = 0;
  double library_seconds = 0;
  std::string first_mismatch;
  for (int i = 0; i < kPartitionInstances; ++i) {
    auto in = oracle::random_instance(rng);
    attribution::CallGraph g;
    g.nodes = in.exes;
    for (const auto& [e, w] : in.edges) g.edges[e] = w;

    auto t0 = Clock::now();
    auto pm = partition::refine_with_callgraph(partition::initial_partition(in.exes, {in.pos, in.neg}), g, in.neg);
    library_seconds += seconds_since(t0);

    auto expected = oracle::sequential(in);
    bool same = pm.assign == expected.assign && pm.unsatisfied == expected.unsatisfied &&
                pm.blocked == expected.blocked;
    agree += same;
    if (!same && first_mismatch.empty()) first_mismatch = " (first mismatch: instance " + std::to_string(i) + ")";
    auto all = oracle::all_saturations(in);
    in_saturations += all.count(oracle::blocks_of(pm.assign)) == 1;
    order_sensitive += all.size() > 1;
  }
  Outcome o;
  o.pass = agree == kPartitionInstances && in_saturations == kPartitionInstances &&
           library_seconds < kPartitionBudgetSeconds;
  o.detail = std::to_string(agree) + "/" + std::to_string(kPartitionInstances) + " equal to the sequential oracle, " +
             std::to_string(in_saturations) + " reachable saturations, " + std::to_string(order_sensitive) +
             " order-sensitive instances, " + fmt(library_seconds, 3) + " s" + first_mismatch;
  return o;
}

// ---------------------------------------------------------------------------
// 2. Resource semantics on the golden trace

ResourceSet files(std::initializer_list<const char*> paths) {
  ResourceSet s;
  for (const char* p : paths) s.insert(Resource::file(p));
  return s;
}

Outcome golden_semantics() {
  auto a = analyze_file(fixtures::fixture("golden/trace.strace"));
  std::map<std::string, attribution::ExeProfile> expected;
  expected["/bin/sh"] = {"/bin/sh",
                         files({"/bin/sh", "/etc/ld.so.cache", "/lib/x86_64-linux-gnu/libc.so.6",
                                "/usr/lib/x86_64-linux-gnu/libc.so.6", "/srv/run.sh", "/srv", "/srv/data/config.ini",
                                "/usr/bin/tool", "/usr/sbin/dbd", "/srv/data", "/srv/data/notes.txt",
                                "/proc/self/exe", "/srv/out.log"}),
                         files({"/srv/out.log", "/srv/pre-exec.tmp", "/srv/data/notes.txt", "/srv/out.log.1"})};
  auto tool_w = files({"/tmp/tool.tmp", "/srv/data/result.txt", "/srv/old.pid", "/srv/pre-exec.tmp"});
  tool_w.insert(Resource::local_socket("/run/db/db.sock"));
  tool_w.insert(Resource::net_socket({"udp", "10.0.0.2", 53}));
  expected["/usr/bin/tool"] = {"/usr/bin/tool", files({"/usr/bin/tool", "/etc/tool.conf", "/tmp/tool.tmp"}), tool_w};
  auto dbd_r = files({"/usr/sbin/dbd", "/run/db"});
  dbd_r.insert(Resource::fifo("/run/db/ctl"));
  auto dbd_w = files({"/var/lib/db/data", "/var/lib/db/current"});
  dbd_w.insert(Resource::local_socket("/run/db/db.sock"));
  dbd_w.insert(Resource::net_socket({"tcp", "::", 3306}));
  dbd_w.insert(Resource::fifo("/run/db/ctl"));
  expected["/usr/sbin/dbd"] = {"/usr/sbin/dbd", dbd_r, dbd_w};

  std::set<attribution::Edge> edges{{"/bin/sh", "/usr/bin/tool"}, {"/bin/sh", "/usr/sbin/dbd"}};
  std::set<std::string> deleted{"/tmp/tool.tmp", "/srv/old.pid", "/srv/pre-exec.tmp"};

  std::vector<std::string> wrong;
  for (const auto& [exe, p] : expected) {
    auto it = a.profiles.find(exe);
    if (it == a.profiles.end()) {
      wrong.push_back(exe + " missing");
      continue;
    }
    if (it->second.reads != p.reads) wrong.push_back("R(" + exe + ")");
    if (it->second.writes != p.writes) wrong.push_back("W(" + exe + ")");
  }
  if (a.profiles.size() != expected.size()) wrong.push_back("executable count");
  if (a.graph.edge_set() != edges) wrong.push_back("call graph");
  if (a.deleted != deleted) wrong.push_back("tombstones");
  if (a.unattributed.reads != files({"/bin/sh"}) || !a.unattributed.writes.empty()) wrong.push_back("unattributed");

  std::size_t n_read = 0, n_write = 0;
  for (const auto& [exe, p] : a.profiles) {
    n_read += p.reads.size();
    n_write += p.writes.size();
  }
  Outcome o;
  o.pass = wrong.empty();
  o.detail = std::to_string(a.profiles.size()) + " executables, " + std::to_string(n_read) + " reads, " +
             std::to_string(n_write) + " writes, " + std::to_string(a.graph.edges.size()) + " edges";
  for (const auto& w : wrong) o.detail += "; mismatch: " + w;
  return o;
}

// ---------------------------------------------------------------------------
// 3. Policy identities

Outcome policy_identities() {
  std::vector<std::string> problems;
  int checked = 0;
  auto check = [&](const std::string& label, const attribution::Analysis& a, const placement::MetadataSource& src) {
    auto all = pipeline::plan(a, partition::parse_policy("policy: all-one\n"), src);
    std::size_t stubs = 0;
    for (const auto& c : all.plan.containers) stubs += c.stubs.size();
    if (all.plan.containers.size() != 1 || !all.plan.volumes.empty() || stubs != 0) {
      problems.push_back(label + " all-one: " + std::to_string(all.plan.containers.size()) + " containers, " +
                         std::to_string(all.plan.volumes.size()) + " volumes, " + std::to_string(stubs) + " stubs");
    }
    auto one = pipeline::plan(a, partition::parse_policy("policy: one-one\n"), src);
    if (one.plan.containers.size() != a.graph.nodes.size()) {
      problems.push_back(label + " one-one: " + std::to_string(one.plan.containers.size()) + " containers for " +
                         std::to_string(a.graph.nodes.size()) + " executables");
    }
    ++checked;
  };

  fixtures::TempDir dir("accept3");
  fixtures::build_tree(dir.path(), fixtures::slurp(fixtures::fixture("mediawiki/tree.txt")));
  check("mediawiki", analyze_file(fixtures::fixture("mediawiki/trace.strace")), placement::DirectorySource(dir.path()));

  auto syn = fixtures::synthetic_trace(20000, 3);
  fixtures::spit(dir / "synthetic.strace", syn.text);
  check("synthetic", analyze_file(dir / "synthetic.strace"), syn.source);

  Outcome o;
  o.pass = problems.empty();
  o.detail = std::to_string(checked) + " fixtures: all-one gives 1 container with no volumes or stubs, one-one gives |E|";
  for (const auto& p : problems) o.detail += "; " + p;
  return o;
}

// ---------------------------------------------------------------------------
// 4. Placement properties

Outcome placement_properties() {
  std::mt19937_64 rng(4);
  int ok = 0;
  std::string first;
  for (int i = 0; i < kPlacementCases; ++i) {
    auto c = oracle::random_placement_case(rng);
    std::vector<std::string> v;
    try {
      auto plan = placement::plan_placement(c.pm, c.profiles, c.blocked, c.source, c.deleted);
      auto acc = placement::summarize_access(c.pm, c.profiles, c.deleted);
      v = {oracle::closure_violation(plan),           oracle::exclusive_violation(c, plan),
           oracle::sharing_violation(c, plan),        oracle::completeness_violation(c, plan),
           placement::check_closure(plan),            placement::check_exclusive_uniqueness(plan, acc, c.source),
           placement::check_sharing_soundness(plan, acc, c.source), placement::check_completeness(plan, acc, c.source)};
    } catch (const std::exception& e) {
      v = {e.what()};
    }
    auto bad = std::find_if(v.begin(), v.end(), [](const std::string& s) { return !s.empty(); });
    if (bad == v.end()) {
      ++ok;
    } else if (first.empty()) {
      first = "case " + std::to_string(i) + ": " + *bad;
    }
  }
  Outcome o;
  o.pass = ok == kPlacementCases;
  o.detail = std::to_string(ok) + "/" + std::to_string(kPlacementCases) +
             " instances keep closure, exclusive uniqueness, sharing soundness and completeness";
  if (!first.empty()) o.detail += "; " + first;
  return o;
}

// ---------------------------------------------------------------------------
// 5. Slimming a 100 MB tree

Outcome slimming() {
  fixtures::TempDir dir("accept5");
  auto fx = fixtures::make_slimming_fixture(dir / "src");
  fixtures::spit(dir / "trace.strace", fx.trace);
  auto t0 = Clock::now();
  auto a = analyze_file(dir / "trace.strace");
  placement::DirectorySource src(dir / "src");
  auto r = pipeline::plan(a, partition::parse_policy("policy: all-one\n"), src);
  double analysis_seconds = seconds_since(t0);
  emit::EmitOptions eo;
  eo.stub_binary = SLIMPART_STUB;
  eo.server_binary = SLIMPART_SERVER;
  auto result = emit::materialize(r.plan, dir / "src", dir / "out", eo);
  auto report = emit::size_report(dir / "src", dir / "out", result.manifests);
  report.analysis_seconds = analysis_seconds;
  std::cout << emit::format_size_report(report);

  double deviation = std::abs(static_cast<double>(report.total_bytes) - static_cast<double>(fx.closure_bytes)) /
                     static_cast<double>(fx.closure_bytes);
  Outcome o;
  o.pass = report.source_bytes == fx.source_bytes && deviation <= kSizeTolerance;
  o.detail = "source " + std::to_string(report.source_bytes) + " B, closure " + std::to_string(fx.closure_bytes) +
             " B, built " + std::to_string(report.total_bytes) + " B (" + fmt(100 * deviation, 3) +
             "% off the closure, tolerance 1%), reduction " + fmt(100 * report.reduction, 1) + "%";
  return o;
}

// ---------------------------------------------------------------------------
// 6. Throughput

Outcome throughput() {
  fixtures::TempDir dir("accept6");
  auto syn = fixtures::synthetic_trace(kThroughputEvents, 6);
  fixtures::spit(dir / "big.strace", syn.text);
  syn.text.clear();
  syn.text.shrink_to_fit();

  auto t0 = Clock::now();
  pipeline::AnalyzeOptions ao;
  ao.traces = {dir / "big.strace"};
  auto analyzed = pipeline::analyze(ao);
  double t_analyze = seconds_since(t0);
  auto planned = pipeline::plan(analyzed.analysis, partition::parse_policy("policy: one-one\n"), syn.source);
  double total = seconds_since(t0);

  Outcome o;
  o.pass = analyzed.load.events == kThroughputEvents && total <= kThroughputHardLimit;
  o.detail = std::to_string(analyzed.load.events) + " events, " + std::to_string(analyzed.analysis.graph.nodes.size()) +
             " executables, " + std::to_string(planned.plan.containers.size()) + " containers: analyze " +
             fmt(t_analyze) + " s, partition+plan " + fmt(total - t_analyze) + " s, total " + fmt(total) + " s";
  if (total >= kThroughputTarget && total <= kThroughputHardLimit) o.detail += " (slow: above the 30 s target)";
  return o;
}

// ---------------------------------------------------------------------------
// 7. RPE conformance

struct Rpe {
  fixtures::TempDir dir{"accept7"};
  std::string socket = dir / "rpe.sock";
  proc::Server server{SLIMPART_SERVER, socket};
  std::vector<std::string> env = proc::environment_without("SLIMPART_RPE_");

  proc::Spawn local(std::string exe, std::vector<std::string> argv) const {
    proc::Spawn s;
    s.exe = std::move(exe);
    s.argv = std::move(argv);
    s.env = env;
    s.inherit_env = false;
    s.cwd = dir.path();
    return s;
  }

  proc::Spawn remote(const std::string& target, std::vector<std::string> argv) const {
    auto s = local(SLIMPART_STUB, std::move(argv));
    s.env.push_back("SLIMPART_RPE_SOCKET=" + socket);
    s.env.push_back("SLIMPART_RPE_TARGET=" + target);
    return s;
  }
};

// Runs the probe with a fixed descriptor layout; `shared` holds descriptors
// that must be the same objects in both runs (stdin, a pipe and a socket).
std::string probe_run(const Rpe& rpe, bool remote, const std::vector<int>& shared) {
  const std::vector<std::string> argv{"rpe-probe", "plain", "with space", "", "t\xc3\xa4st", "--flag=1"};
  auto s = remote ? rpe.remote(SLIMPART_PROBE, argv) : rpe.local(SLIMPART_PROBE, argv);
  int out = ::open((rpe.dir / "probe.out").c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  int err = ::open((rpe.dir / "probe.err").c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  int ro = ::open((rpe.dir / "input.txt").c_str(), O_RDONLY | O_CLOEXEC);
  ::lseek(ro, 17, SEEK_SET);
  int app = ::open((rpe.dir / "append.log").c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0600);
  s.fds = {{1, out}, {2, err}, {3, ro}, {4, app}, {6, shared[0]}, {9, shared[1]}, {0, shared[2]}};
  mode_t old = ::umask(027);
  auto r = proc::run(s);
  ::umask(old);
  for (int fd : {out, err, ro, app}) ::close(fd);
  if (!r.exited() || r.code() != 0) return "probe failed with status " + std::to_string(r.status);
  return fixtures::slurp(rpe.dir / "probe.out");
}

double run_ms(const proc::Spawn& s) {
  auto r = proc::run(s);
  if (!r.exited() || r.code() != 0) throw std::runtime_error("timed invocation failed: " + r.err);
  return r.seconds * 1000.0;
}

Outcome rpe_conformance() {
  Rpe rpe;
  std::vector<std::string> problems;
  std::string notes;

  // Transparency.
  fixtures::spit(rpe.dir / "input.txt", "0123456789abcdefghijklmnopqrstuvwxyz\n");
  int pipefd[2], sv[2], in[2];
  if (::pipe2(pipefd, O_CLOEXEC) != 0 || ::pipe2(in, O_CLOEXEC) != 0 || ::socketpair(AF_UNIX, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0, sv) != 0) {
    return {false, "cannot create pipe or socketpair"};
  }
  auto local = probe_run(rpe, false, {pipefd[1], sv[0], in[0]});
  auto remote = probe_run(rpe, true, {pipefd[1], sv[0], in[0]});
  for (int fd : {pipefd[0], pipefd[1], sv[0], sv[1], in[0], in[1]}) ::close(fd);
  if (local != remote) {
    problems.push_back("probe output differs");
    std::cout << "--- local probe\n" << local << "--- remote probe\n" << remote;
  }

  // Exit codes.
  int codes_ok = 0;
  for (int code = 0; code < 256; ++code) {
    auto r = proc::run(rpe.remote("/bin/sh", {"sh", "-c", "exit " + std::to_string(code)}));
    codes_ok += r.exited() && r.code() == code;
  }
  if (codes_ok != 256) problems.push_back(std::to_string(codes_ok) + "/256 exit codes");

  // Fatal signals raised inside the remote process, and sent to the stub.
  int signals_ok = 0;
  for (int sig : {SIGTERM, SIGINT, SIGKILL}) {
    auto script = "kill -" + std::to_string(sig) + " $$";
    auto l = proc::run(rpe.local("/bin/sh", {"sh", "-c", script}));
    auto r = proc::run(rpe.remote("/bin/sh", {"sh", "-c", script}));
    bool same = l.signal() == sig && r.signal() == sig;
    signals_ok += same;
    if (!same) problems.push_back("raised signal " + std::to_string(sig) + ": remote " + std::to_string(r.signal()));

    auto pidfile = rpe.dir / ("child." + std::to_string(sig));
    pid_t stub = proc::start(rpe.remote("/bin/sh", {"sh", "-c", "echo $$ > " + pidfile + "; exec sleep 30"}));
    auto deadline = Clock::now() + std::chrono::seconds(10);
    pid_t child = 0;
    while (Clock::now() < deadline) {
      if (::access(pidfile.c_str(), F_OK) == 0) {
        auto text = fixtures::slurp(pidfile);
        if (!text.empty() && text.back() == '\n') {
          child = std::stoi(text);
          break;
        }
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    ::kill(stub, sig);
    int status = proc::wait_for(stub, 10);
    // The remote process must not outlive the stub.
    bool child_gone = false;
    for (int i = 0; i < 400 && child > 0; ++i) {
      if (::kill(child, 0) != 0) {
        child_gone = true;
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    bool sent_ok = WIFSIGNALED(status) && WTERMSIG(status) == sig && child_gone;
    signals_ok += sent_ok;
    if (!sent_ok) problems.push_back("forwarded signal " + std::to_string(sig));
  }

  // Shell redirection through shipped descriptors.
  {
    int out = ::open((rpe.dir / "redir.out").c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    int five = ::open((rpe.dir / "redir.5").c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    auto s = rpe.remote("/bin/sh", {"sh", "-c", "read line; echo \"got $line\"; echo five >&5"});
    s.input = "hello\n";
    s.fds = {{1, out}, {5, five}};
    auto r = proc::run(s);
    ::close(out);
    ::close(five);
    if (r.code() != 0 || fixtures::slurp(rpe.dir / "redir.out") != "got hello\n" ||
        fixtures::slurp(rpe.dir / "redir.5") != "five\n") {
      problems.push_back("shell redirection");
    }
  }

  // Overhead.
  std::vector<double> local_ms, remote_ms;
  for (int i = 0; i < 41; ++i) {
    local_ms.push_back(run_ms(rpe.local("/bin/true", {"true"})));
    remote_ms.push_back(run_ms(rpe.remote("/bin/true", {"true"})));
  }
  double med_local = median(local_ms), med_remote = median(remote_ms);
  if (med_remote > kRpeMedianLimitMs) problems.push_back("median invocation " + fmt(med_remote) + " ms");

  // Latency against descriptor count and argv size. Sizes are visited round
  // robin so drift on a busy machine spreads evenly over the points.
  auto sweep = [](const std::vector<proc::Spawn>& spawns) {
    std::vector<std::vector<double>> t(spawns.size());
    for (int k = 0; k < 21; ++k) {
      for (std::size_t i = 0; i < spawns.size(); ++i) t[i].push_back(run_ms(spawns[i]));
    }
    std::vector<double> y;
    for (auto& v : t) y.push_back(median(v));
    return y;
  };
  std::vector<double> fd_x;
  std::vector<proc::Spawn> fd_runs;
  std::vector<int> spare;
  for (int n : {0, 128, 256, 384, 512}) {
    auto s = rpe.remote("/bin/true", {"true"});
    while (spare.size() < static_cast<std::size_t>(n)) spare.push_back(::open("/dev/null", O_RDONLY | O_CLOEXEC));
    for (int i = 0; i < n; ++i) s.fds[10 + i] = spare[static_cast<std::size_t>(i)];
    fd_x.push_back(n);
    fd_runs.push_back(std::move(s));
  }
  auto fd_y = sweep(fd_runs);
  for (int fd : spare) ::close(fd);
  std::vector<double> arg_x;
  std::vector<proc::Spawn> arg_runs;
  for (int chunks : {0, 4, 8, 12, 16}) {
    std::vector<std::string> argv{"true"};
    for (int i = 0; i < chunks; ++i) argv.push_back(std::string(64 * 1024 - 1, static_cast<char>('a' + i)));
    arg_x.push_back(chunks * 64.0);
    arg_runs.push_back(rpe.remote("/bin/true", argv));
  }
  auto arg_y = sweep(arg_runs);
  double fd_slope = slope(fd_x, fd_y), arg_slope = slope(arg_x, arg_y);
  if (fd_slope <= 0) problems.push_back("latency does not grow with descriptor count");
  if (arg_slope <= 0) problems.push_back("latency does not grow with argv size");

  std::cout << "rpe latency by shipped descriptors:";
  for (std::size_t i = 0; i < fd_x.size(); ++i) std::cout << " " << fd_x[i] << ":" << fmt(fd_y[i]) << "ms";
  std::cout << "\nrpe latency by argv KiB:";
  for (std::size_t i = 0; i < arg_x.size(); ++i) std::cout << " " << arg_x[i] << ":" << fmt(arg_y[i]) << "ms";
  std::cout << "\n";

  Outcome o;
  o.pass = problems.empty();
  o.detail = std::string("probe ") + (local == remote ? "identical" : "differs") + ", " + std::to_string(codes_ok) +
             "/256 exit codes, " + std::to_string(signals_ok) + "/6 signal cases, median " + fmt(med_remote) +
             " ms remote vs " + fmt(med_local) + " ms local (overhead " + fmt(med_remote - med_local) +
             " ms), slope " + fmt(fd_slope * 1000, 1) + " us/fd, " + fmt(arg_slope * 1000, 1) + " us/KiB" + notes;
  for (const auto& p : problems) o.detail += "; " + p;
  return o;
}

// ---------------------------------------------------------------------------
// 8. Mediawiki end to end

nlohmann::json mediawiki_structure() {
  fixtures::TempDir dir("accept8");
  fixtures::build_tree(dir.path(), fixtures::slurp(fixtures::fixture("mediawiki/tree.txt")));
  auto a = analyze_file(fixtures::fixture("mediawiki/trace.strace"));
  placement::DirectorySource src(dir.path());
  auto r = pipeline::plan(a, partition::load_policy_file(fixtures::fixture("mediawiki/policy.txt")), src);
  return fixtures::plan_structure(r.plan);
}

Outcome mediawiki() {
  auto got = mediawiki_structure();
  auto expected = nlohmann::json::parse(fixtures::slurp(fixtures::fixture("mediawiki/expected_plan.json")));
  Outcome o;
  o.pass = got == expected;
  std::vector<std::string> shared;
  for (const auto& v : got["volumes"]) {
    std::string names;
    for (const auto& c : v["containers"]) names += (names.empty() ? "" : "+") + c.get<std::string>();
    shared.push_back(v["mount"].get<std::string>() + " (" + names + ")");
  }
  o.detail = std::to_string(got["containers"].size()) + " containers, shared";
  for (std::size_t i = 0; i < shared.size(); ++i) o.detail += (i ? ", " : " ") + shared[i];
  if (!o.pass) {
    o.detail += "; differs from expected_plan.json";
    std::cout << nlohmann::json::diff(expected, got).dump(2) << "\n";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc == 3 && std::strcmp(argv[1], "--write-expected") == 0) {
    fixtures::spit(argv[2], mediawiki_structure().dump(2) + "\n");
    return 0;
  }
  // Stubs killed by forwarded signals must not take us down via SIGPIPE.
  ::signal(SIGPIPE, SIG_IGN);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"partition oracle equivalence", partition_oracle},
      {"resource semantics golden trace", golden_semantics},
      {"policy identities", policy_identities},
      {"placement property suite", placement_properties},
      {"slimming at desk scale", slimming},
      {"throughput 10^6 events", throughput},
      {"RPE conformance", rpe_conformance},
      {"Mediawiki end-to-end plan", mediawiki},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << criteria[i].first << ": " << o.detail << " ["
              << fmt(seconds_since(t0), 1) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
