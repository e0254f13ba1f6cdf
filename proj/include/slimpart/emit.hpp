#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slimpart/placement.hpp"

// Materializes a placement plan as plain directory trees:
//
//   <out>/containers/<name>/rootfs/...      the container filesystem
//   <out>/containers/<name>/manifest.json
//   <out>/containers/<name>/Dockerfile
//   <out>/shared/<key>/...                  shared volume contents
//   <out>/shared/manifest.json
//   <out>/shared/rpe/                       RPE socket volume
//   <out>/docker-compose.json
namespace slimpart::emit {

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kSupportDir = "/.slimpart";
inline constexpr const char* kStubTable = "/.slimpart/stubs";
inline constexpr const char* kServerPath = "/.slimpart/bin/rpe-server";

struct ManifestEntry {
  std::string path;
  placement::FileMeta meta;
  // exclusive, duplicate, shared, ancestor, mountpoint, stub or support
  std::string origin;

  bool operator==(const ManifestEntry&) const = default;
};

struct VolumeRef {
  std::string key;
  std::string mount;
  std::string host;  // relative to the output directory

  bool operator==(const VolumeRef&) const = default;
};

struct ContainerManifest {
  int version = kManifestVersion;
  std::string name;
  std::vector<std::string> exes;
  std::vector<ManifestEntry> files;  // sorted by path
  std::vector<VolumeRef> volumes;
  std::vector<placement::StubSpec> stubs;
  std::vector<std::string> entry_argv;  // empty unless this is the entry container
  std::string server_socket;            // set when the container runs an RPE server
  bool shared_net = false;
  std::vector<std::string> warnings;

  bool operator==(const ContainerManifest&) const = default;
};

struct EmitOptions {
  std::string stub_binary;    // host path of slimpart-stub; required when the plan has stubs
  std::string server_binary;  // host path of slimpart-rpe-server; required for RPE servers
  bool force = false;         // replace a non-empty output directory
};

struct EmitResult {
  std::vector<ContainerManifest> manifests;
  std::vector<std::string> warnings;
};

// Throws MissingSourceFile when planned paths are absent from source_root and
// Error(Precondition) when out_dir is non-empty without `force`.
EmitResult materialize(const placement::PlacementPlan& plan, const std::string& source_root,
                       const std::string& out_dir, const EmitOptions& opts = {});

std::string dump_manifest(const ContainerManifest& m);
ContainerManifest parse_manifest(std::string_view text);

// docker-compose document (JSON syntax) for the manifests.
std::string emit_compose(const std::vector<ContainerManifest>& manifests);

// lstat walk of a tree, relative paths rendered as container paths.
std::vector<ManifestEntry> walk_tree(const std::string& root);

// Sum of regular file sizes below root (symlinks are not followed).
std::uint64_t tree_bytes(const std::string& root);

struct SizeRow {
  std::string name;
  std::uint64_t bytes = 0;
};

struct SizeReport {
  std::uint64_t source_bytes = 0;
  std::vector<SizeRow> containers;
  std::uint64_t shared_bytes = 0;
  std::uint64_t total_bytes = 0;
  double reduction = 0.0;  // 1 - total / source
  std::optional<double> analysis_seconds;
  std::optional<double> build_seconds;
};

SizeReport size_report(const std::string& source_root, const std::string& out_dir,
                       const std::vector<ContainerManifest>& manifests);
std::string format_size_report(const SizeReport& r);

}  // namespace slimpart::emit
