#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slimpart/document.hpp"
#include "slimpart/emit.hpp"
#include "slimpart/error.hpp"
#include "slimpart/pipeline.hpp"
#include "slimpart/rpe.hpp"

namespace fs = std::filesystem;
using namespace slimpart;

namespace {

constexpr int kInputError = 1;
constexpr int kInternalError = 2;

struct TraceFlags {
  std::vector<std::string> traces;
  std::string format = "auto";
  std::string root_cwd = "/";
  std::string root_exe;
  bool strict = false;

  void attach(CLI::App* cmd, bool required) {
    auto* t = cmd->add_option("-t,--trace", traces, "strace output or canonical trace file (repeatable, one per run)");
    if (required) t->required();
    cmd->add_option("--format", format, "trace format")->check(CLI::IsMember({"auto", "strace", "canonical"}));
    cmd->add_option("--root-cwd", root_cwd, "working directory of the traced process at start");
    cmd->add_option("--root-exe", root_exe, "executable the first traced process was already running");
    cmd->add_flag("--strict", strict, "fail on the first malformed trace line");
  }

  pipeline::AnalyzeOptions options() const {
    pipeline::AnalyzeOptions o;
    o.traces = traces;
    o.root_cwd = root_cwd;
    o.root_exe = root_exe;
    o.load.strict = strict;
    o.load.format = format == "strace"      ? trace::Format::StraceText
                    : format == "canonical" ? trace::Format::Canonical
                                            : trace::Format::Auto;
    return o;
  }
};

std::string sibling_binary(const char* name) {
  std::error_code ec;
  auto self = fs::read_symlink("/proc/self/exe", ec);
  if (ec) return name;
  return (self.parent_path() / name).string();
}

pipeline::AnalyzeResult run_analyze(const TraceFlags& f) {
  auto r = pipeline::analyze(f.options());
  for (const auto& w : r.load.warnings) std::cerr << "warning: " << w << "\n";
  std::cerr << "analyzed " << r.load.events << " events from " << f.traces.size() << " trace(s) in " << r.seconds
            << " s\n";
  return r;
}

void write_analysis(const pipeline::AnalyzeResult& r, const std::string& out, const std::string& report) {
  document::write_file(out, document::dump_analysis(r.analysis));
  document::write_file(report, attribution::report(r.analysis));
  std::cerr << "wrote " << out << " and " << report << "\n";
}

std::string default_report(const std::string& out, const std::string& suffix) {
  fs::path p(out);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slimpart: trace-driven container partitioning and slimming"};
  app.require_subcommand(1);

  auto* analyze = app.add_subcommand("analyze", "parse traces and attribute resources to executables");
  TraceFlags a_trace;
  a_trace.attach(analyze, false);
  std::string a_out = "analysis.json";
  std::string a_report;
  analyze->add_option("-o,--output", a_out, "analysis document to write");
  analyze->add_option("--report", a_report, "human-readable report (default: <output>-report.txt)");

  auto* part = app.add_subcommand("partition", "partition executables and plan resource placement");
  TraceFlags p_trace;
  p_trace.attach(part, false);
  std::string p_analysis, p_policy, p_source, p_out = "plan.json", p_summary;
  part->add_option("-a,--analysis", p_analysis, "analysis document (instead of --trace)");
  part->add_option("-p,--policy", p_policy, "policy file")->required();
  part->add_option("-s,--source", p_source, "extracted original container filesystem")->required();
  part->add_option("-o,--output", p_out, "plan document to write");
  part->add_option("--summary", p_summary, "summary file (default: <output>-summary.txt)");

  auto* build = app.add_subcommand("build", "materialize container trees from a plan");
  TraceFlags b_trace;
  b_trace.attach(build, false);
  std::string b_plan, b_analysis, b_policy, b_source, b_out;
  std::string b_stub = sibling_binary("slimpart-stub");
  std::string b_server = sibling_binary("slimpart-rpe-server");
  bool b_force = false;
  build->add_option("--plan", b_plan, "plan document (otherwise planned inline)");
  build->add_option("-a,--analysis", b_analysis, "analysis document for inline planning");
  build->add_option("-p,--policy", b_policy, "policy file for inline planning");
  build->add_option("-s,--source", b_source, "extracted original container filesystem")->required();
  build->add_option("-o,--out", b_out, "output directory")->required();
  build->add_option("--stub-binary", b_stub, "statically linked stub to install at RPE sites");
  build->add_option("--server-binary", b_server, "statically linked RPE server");
  build->add_flag("-f,--force", b_force, "replace an existing non-empty output directory");

  auto* server = app.add_subcommand("rpe-server", "serve remote process execution requests");
  rpe::ServerOptions s_opts;
  std::vector<std::string> s_cmd;
  server->add_option("--listen", s_opts.socket_path, "local socket path")->required();
  server->add_flag("-v,--verbose", s_opts.verbose, "log sessions to standard error");
  server->add_option("command", s_cmd, "command to run alongside the server (after --)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kInputError;
  }

  try {
    if (*analyze) {
      auto r = run_analyze(a_trace);
      write_analysis(r, a_out, a_report.empty() ? default_report(a_out, "-report.txt") : a_report);
      return 0;
    }

    auto load_or_analyze = [](const TraceFlags& t, const std::string& analysis_path,
                              std::optional<double>* seconds) -> attribution::Analysis {
      if (!analysis_path.empty()) return document::parse_analysis(document::read_file(analysis_path));
      if (t.traces.empty()) throw Error(ErrorKind::Precondition, "either --analysis or --trace is required");
      auto r = run_analyze(t);
      if (seconds) *seconds = r.seconds;
      return std::move(r.analysis);
    };

    if (*part) {
      auto analysis = load_or_analyze(p_trace, p_analysis, nullptr);
      auto policy = partition::load_policy_file(p_policy);
      placement::DirectorySource src(p_source);
      auto r = pipeline::plan(analysis, policy, src);
      document::write_file(p_out, document::dump_plan(r.plan));
      auto text = pipeline::summary(r);
      document::write_file(p_summary.empty() ? default_report(p_out, "-summary.txt") : p_summary, text);
      std::cerr << text << "planned in " << r.seconds << " s; wrote " << p_out << "\n";
      return 0;
    }

    if (*build) {
      auto t0 = std::chrono::steady_clock::now();
      std::optional<double> analysis_seconds;
      placement::PlacementPlan plan;
      if (!b_plan.empty()) {
        plan = document::parse_plan(document::read_file(b_plan));
      } else {
        if (b_policy.empty()) throw Error(ErrorKind::Precondition, "build needs --plan or --policy");
        auto analysis = load_or_analyze(b_trace, b_analysis, &analysis_seconds);
        placement::DirectorySource src(b_source);
        auto r = pipeline::plan(analysis, partition::load_policy_file(b_policy), src);
        std::cerr << pipeline::summary(r);
        analysis_seconds = analysis_seconds.value_or(0.0) + r.seconds;
        plan = std::move(r.plan);
      }
      emit::EmitOptions eo;
      eo.stub_binary = b_stub;
      eo.server_binary = b_server;
      eo.force = b_force;
      auto result = emit::materialize(plan, b_source, b_out, eo);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
      auto report = emit::size_report(b_source, b_out, result.manifests);
      report.analysis_seconds = analysis_seconds;
      report.build_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      auto text = emit::format_size_report(report);
      document::write_file((fs::path(b_out) / "size-report.txt").string(), text);
      std::cerr << text;
      return 0;
    }

    if (*server) return rpe::run_server(s_opts, s_cmd);
  } catch (const MissingSourceFile& e) {
    std::cerr << "error: missing source files:\n";
    for (const auto& p : e.paths()) std::cerr << "  " << p << "\n";
    return kInputError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Invariant ? kInternalError : kInputError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return 0;
}
