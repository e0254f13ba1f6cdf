#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "slimpart/placement.hpp"

namespace fixtures {

// Directory under /tmp removed with everything below it on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "slimpart");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::string& path() const { return path_; }
  std::string operator/(const std::string& rel) const { return path_ + "/" + rel; }

 private:
  std::string path_;
};

// Absolute path of a checked-in fixture file.
std::string fixture(const std::string& rel);
std::string slurp(const std::string& path);
void spit(const std::string& path, const std::string& content);

// Builds a tree from a listing, one entry per line:
//   d <mode> <path>             directory
//   f <mode> <size> <path>      regular file with deterministic content
//   s <mode> <size> <path> <interpreter>   "#!" script padded to size
//   l <path> <target>           symlink
// Every entry gets mtime 1600000000 + line number so trees are reproducible.
void build_tree(const std::string& root, const std::string& listing);

// A 100 MiB tree where one traced executable reads a 30 MiB closure.
struct SlimmingFixture {
  std::string trace;               // strace text
  std::uint64_t source_bytes = 0;  // all regular files
  std::uint64_t closure_bytes = 0; // regular files the trace reads
  std::vector<std::string> closure;
};
SlimmingFixture make_slimming_fixture(const std::string& root, std::uint64_t total = 100ull << 20,
                                      std::uint64_t touched = 30ull << 20);

// A launcher-mode strace capture with exactly `events` system-call lines from
// a small process tree, plus a source holding every path it reads.
struct SyntheticTrace {
  std::string text;
  slimpart::placement::MemorySource source;
  std::size_t executables = 0;
};
SyntheticTrace synthetic_trace(std::size_t events, std::uint64_t seed = 1);

// Plan reduced to what the partitioning decided: names, members, placed paths
// and roles, volumes, stubs and the network flag. Metadata is left out.
nlohmann::json plan_structure(const slimpart::placement::PlacementPlan& plan);

}  // namespace fixtures
