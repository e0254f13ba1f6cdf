#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slimpart/attribution.hpp"

namespace slimpart::partition {

// Unordered executable pair, stored with first < second.
using ExePair = std::pair<std::string, std::string>;
ExePair make_pair(std::string a, std::string b);

struct Constraints {
  std::set<ExePair> pos;
  std::set<ExePair> neg;

  bool operator==(const Constraints&) const = default;
};

struct Subset {
  std::string name;
  std::vector<std::string> members;
};

struct Policy {
  enum class Kind { AllOne, OneOne, DisjointSubsets };
  Kind kind = Kind::AllOne;
  std::vector<Subset> subsets;
};

std::string_view to_string(Policy::Kind kind);

// Policy text:
//   # comment
//   policy: all-one | one-one | subsets
//   subset <name>: <exe path> <exe path> ...
Policy parse_policy(std::string_view text, std::string_view source = "<policy>");
Policy load_policy_file(const std::string& path);

// Throws Error(Policy) for overlapping subsets or names outside `exes`.
Constraints compile_policy(const Policy& p, const std::set<std::string>& exes);

struct PartitionMap {
  // Container index per executable. Indices are canonical: blocks are numbered
  // by their lexicographically smallest member.
  std::map<std::string, int> assign;
  std::vector<ExePair> unsatisfied;
  std::vector<attribution::Edge> blocked;

  std::vector<std::vector<std::string>> blocks() const;
  int count() const;
  bool operator==(const PartitionMap&) const = default;
};

// Singletons, then positive pairs merged in lexicographic order (vetoed by any
// negative pair) until nothing changes.
PartitionMap initial_partition(const std::set<std::string>& exes, const Constraints& c);

// Merges along call edges in lexicographic order to a fixpoint. Edges left
// crossing blocks are recorded as blocked (stub sites).
PartitionMap refine_with_callgraph(const PartitionMap& pm, const attribution::CallGraph& graph,
                                   const std::set<ExePair>& neg);

struct PartitionResult {
  PartitionMap map;
  Constraints constraints;
  std::vector<std::string> dont_care;
};

PartitionResult partition(const std::set<std::string>& exes, const attribution::CallGraph& graph,
                          const Policy& p);

// Human-facing container names: the subset name for blocks holding subset
// members, otherwise "c<index>-<basename of smallest member>".
std::vector<std::string> container_names(const PartitionMap& pm, const Policy& p);

}  // namespace slimpart::partition
