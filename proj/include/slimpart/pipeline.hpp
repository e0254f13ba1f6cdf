#pragma once

#include <string>
#include <vector>

#include "slimpart/attribution.hpp"
#include "slimpart/partition.hpp"
#include "slimpart/placement.hpp"
#include "slimpart/trace.hpp"

// Stage wiring shared by the command-line driver, the Python module and the
// acceptance suite.
namespace slimpart::pipeline {

struct AnalyzeOptions {
  std::vector<std::string> traces;
  trace::LoadOptions load;
  std::string root_cwd = "/";
  std::string root_exe;  // empty: the tracer launched the workload (launcher mode)
};

struct AnalyzeResult {
  attribution::Analysis analysis;
  trace::LoadReport load;
  double seconds = 0.0;
};

AnalyzeResult analyze(const AnalyzeOptions& opts);
attribution::Analysis analyze_log(const trace::ExecutionLog& el, const AnalyzeOptions& opts);

struct PlanResult {
  partition::PartitionResult partition;
  std::vector<std::string> names;
  placement::PlacementPlan plan;
  double seconds = 0.0;
};

PlanResult plan(const attribution::Analysis& a, const partition::Policy& policy,
                const placement::MetadataSource& source);

// Per-container resource counts and max_i |R(C_i)|.
std::string summary(const PlanResult& r);

}  // namespace slimpart::pipeline
