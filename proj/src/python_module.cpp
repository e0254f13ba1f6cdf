#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "slimpart/document.hpp"
#include "slimpart/emit.hpp"
#include "slimpart/error.hpp"
#include "slimpart/pipeline.hpp"
#include "slimpart/trace.hpp"

namespace py = pybind11;
using namespace slimpart;

namespace {

pipeline::AnalyzeOptions analyze_options(std::string root_cwd, std::string root_exe, bool strict,
                                         const std::string& format) {
  pipeline::AnalyzeOptions o;
  o.root_cwd = std::move(root_cwd);
  o.root_exe = std::move(root_exe);
  o.load.strict = strict;
  if (format == "strace") {
    o.load.format = trace::Format::StraceText;
  } else if (format == "canonical") {
    o.load.format = trace::Format::Canonical;
  } else if (format != "auto") {
    throw Error(ErrorKind::Precondition, "unknown trace format '" + format + "'");
  }
  return o;
}

py::dict analyze(std::vector<std::string> traces, std::string root_cwd, std::string root_exe, bool strict,
                 const std::string& format) {
  auto o = analyze_options(std::move(root_cwd), std::move(root_exe), strict, format);
  o.traces = std::move(traces);
  pipeline::AnalyzeResult r;
  {
    py::gil_scoped_release nogil;
    r = pipeline::analyze(o);
  }
  py::dict out;
  out["analysis"] = document::dump_analysis(r.analysis);
  out["report"] = attribution::report(r.analysis);
  out["events"] = r.load.events;
  out["warnings"] = r.load.warnings;
  out["seconds"] = r.seconds;
  return out;
}

// One strace text per run.
std::string analyze_text(const std::vector<std::string>& runs, std::string root_cwd, std::string root_exe,
                         bool strict) {
  auto o = analyze_options(std::move(root_cwd), std::move(root_exe), strict, "strace");
  trace::ExecutionLog el;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    el.logs.push_back(trace::parse_strace_text(runs[i], "<run " + std::to_string(i) + ">", o.load));
  }
  return document::dump_analysis(pipeline::analyze_log(el, o));
}

py::dict partition_exes(const std::vector<std::string>& exes,
                        const std::vector<std::pair<std::string, std::string>>& edges,
                        const std::string& policy_text) {
  attribution::CallGraph g;
  g.nodes.insert(exes.begin(), exes.end());
  for (const auto& e : edges) {
    g.nodes.insert(e.first);
    g.nodes.insert(e.second);
    ++g.edges[e];
  }
  auto policy = partition::parse_policy(policy_text);
  auto r = partition::partition(g.nodes, g, policy);
  py::dict out;
  out["assign"] = r.map.assign;
  out["names"] = partition::container_names(r.map, policy);
  out["blocked"] = r.map.blocked;
  out["unsatisfied"] = r.map.unsatisfied;
  out["dont_care"] = r.dont_care;
  return out;
}

py::tuple plan(const std::string& analysis_json, const std::string& policy_text, const std::string& source_root) {
  auto analysis = document::parse_analysis(analysis_json);
  auto policy = partition::parse_policy(policy_text);
  placement::DirectorySource src(source_root);
  auto r = pipeline::plan(analysis, policy, src);
  return py::make_tuple(document::dump_plan(r.plan), pipeline::summary(r));
}

py::dict build(const std::string& plan_json, const std::string& source_root, const std::string& out_dir,
               std::string stub_binary, std::string server_binary, bool force) {
  auto plan = document::parse_plan(plan_json);
  emit::EmitOptions eo;
  eo.stub_binary = std::move(stub_binary);
  eo.server_binary = std::move(server_binary);
  eo.force = force;
  emit::EmitResult result;
  emit::SizeReport rep;
  {
    py::gil_scoped_release nogil;
    result = emit::materialize(plan, source_root, out_dir, eo);
    rep = emit::size_report(source_root, out_dir, result.manifests);
  }
  py::dict sizes;
  for (const auto& row : rep.containers) sizes[py::str(row.name)] = row.bytes;
  py::dict out;
  out["source_bytes"] = rep.source_bytes;
  out["total_bytes"] = rep.total_bytes;
  out["shared_bytes"] = rep.shared_bytes;
  out["reduction"] = rep.reduction;
  out["containers"] = sizes;
  out["warnings"] = result.warnings;
  out["report"] = emit::format_size_report(rep);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Trace-driven container partitioning and slimming";

  static py::exception<Error> base(m, "SlimpartError", PyExc_ValueError);
  static py::exception<MalformedLine> malformed(m, "MalformedLine", base.ptr());
  static py::exception<MissingSourceFile> missing(m, "MissingSourceFile", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const MalformedLine& e) {
      py::set_error(malformed, e.what());
    } catch (const MissingSourceFile& e) {
      std::string msg = e.what();
      for (const auto& path : e.paths()) msg += "\n  " + path;
      py::set_error(missing, msg.c_str());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  m.def("analyze", &analyze, py::arg("traces"), py::arg("root_cwd") = "/", py::arg("root_exe") = "",
        py::arg("strict") = false, py::arg("format") = "auto",
        "Parse trace files (one per run) and attribute resources to executables.");
  m.def("analyze_text", &analyze_text, py::arg("runs"), py::arg("root_cwd") = "/", py::arg("root_exe") = "",
        py::arg("strict") = false, "Like analyze, for strace output held in memory. Returns the analysis document.");
  m.def("partition", &partition_exes, py::arg("exes"), py::arg("edges"), py::arg("policy"));
  m.def("plan", &plan, py::arg("analysis"), py::arg("policy"), py::arg("source"),
        "Returns (plan document, summary text).");
  m.def("build", &build, py::arg("plan"), py::arg("source"), py::arg("out"), py::arg("stub_binary") = "",
        py::arg("server_binary") = "", py::arg("force") = false);
  m.def(
      "escape_bytes", [](const py::bytes& b) { return document::escape_bytes(std::string(b)); }, py::arg("data"));
  m.def(
      "unescape_bytes", [](const std::string& s) { return py::bytes(document::unescape_bytes(s)); }, py::arg("text"));
}
