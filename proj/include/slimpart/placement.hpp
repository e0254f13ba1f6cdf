#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "slimpart/attribution.hpp"
#include "slimpart/partition.hpp"
#include "slimpart/rsrc.hpp"

namespace slimpart::placement {

enum class FileType { Regular, Directory, Symlink, Fifo, Socket, CharDevice, BlockDevice };

std::string_view to_string(FileType t);
std::optional<FileType> file_type_from_string(std::string_view s);

struct FileMeta {
  FileType type = FileType::Regular;
  std::uint32_t mode = 0644;  // permission bits including setuid/setgid/sticky
  std::uint32_t uid = 0;
  std::uint32_t gid = 0;
  std::int64_t mtime_sec = 0;
  std::int64_t mtime_nsec = 0;
  std::uint64_t size = 0;
  std::optional<std::string> link_target;

  bool operator==(const FileMeta&) const = default;
};

// Answers lstat-style questions about the original container filesystem.
// Lookups never follow symlinks; callers resolve ancestor links themselves.
class MetadataSource {
 public:
  virtual ~MetadataSource() = default;
  virtual std::optional<FileMeta> lookup(const std::string& path) const = 0;
  // Program the kernel loads to run the regular file at `path`: the "#!" line
  // of a script or the PT_INTERP entry of a dynamic ELF binary. `path` must
  // not cross symlinks.
  virtual std::optional<std::string> interpreter(const std::string& path) const;
};

// An extracted container tree on the host, addressed by container paths.
class DirectorySource : public MetadataSource {
 public:
  explicit DirectorySource(std::string root);
  std::optional<FileMeta> lookup(const std::string& path) const override;
  std::optional<std::string> interpreter(const std::string& path) const override;
  const std::string& root() const { return root_; }

 private:
  std::string root_;
};

class MemorySource : public MetadataSource {
 public:
  std::map<std::string, FileMeta> entries;
  std::map<std::string, std::string> interpreters;

  std::optional<FileMeta> lookup(const std::string& path) const override;
  std::optional<std::string> interpreter(const std::string& path) const override;
  // Adds `path` plus any missing ancestors as 0755 directories.
  void add(const std::string& path, FileMeta meta);
};

struct AccessEntry {
  std::set<int> readers;
  std::set<int> writers;
  bool deleted = false;

  std::set<int> accessors() const;
  bool operator==(const AccessEntry&) const = default;
};

using AccessSummary = std::map<rsrc::Resource, AccessEntry>;

// Joins executable profiles over the blocks of the partition.
AccessSummary summarize_access(const partition::PartitionMap& pm,
                               const std::map<std::string, attribution::ExeProfile>& profiles,
                               const std::set<std::string>& deleted = {});

struct Classification {
  enum class Kind { Exclusive, Duplicate, SharedVolume, NetworkLink };
  Kind kind = Kind::Exclusive;
  std::set<int> containers;
  std::string volume;  // SharedVolume: the mounted parent directory

  bool operator==(const Classification&) const = default;
};

std::string_view to_string(Classification::Kind k);

Classification classify_resource(const rsrc::Resource& r, const AccessEntry& acc);

// Closed under parent directory; "/" itself is never listed.
std::set<std::string> path_closure(const std::set<std::string>& paths);

bool is_wildcard_host(std::string_view host);
bool is_loopback_host(std::string_view host);
bool match_socket_addrs(const rsrc::NetAddress& bound, const rsrc::NetAddress& peer);

// Why a path is present in a container tree or volume.
enum class Role { Exclusive, Duplicate, Shared, Ancestor, MountPoint };

std::string_view to_string(Role r);
std::optional<Role> role_from_string(std::string_view s);

struct PlacedFile {
  std::string path;
  FileMeta meta;
  Role role = Role::Exclusive;

  bool operator==(const PlacedFile&) const = default;
};

struct VolumeMount {
  std::string key;
  std::string mount;

  bool operator==(const VolumeMount&) const = default;
};

struct StubSpec {
  std::string path;  // callee executable path, the same in both containers
  int target = 0;
  std::string target_name;
  std::string socket;  // server socket path inside the containers

  bool operator==(const StubSpec&) const = default;
};

struct ContainerPlan {
  int index = 0;
  std::string name;
  std::vector<std::string> exes;
  std::vector<PlacedFile> files;  // sorted by path
  std::vector<VolumeMount> volumes;
  std::vector<StubSpec> stubs;
  std::vector<rsrc::NetAddress> net;
  bool shared_net = false;
  bool rpe_server = false;
  std::size_t reads = 0;
  std::size_t writes = 0;
  std::size_t resources = 0;  // |R(C_i)|

  bool operator==(const ContainerPlan&) const = default;
};

struct SharedVolume {
  std::string key;
  std::string mount;
  std::vector<int> containers;
  std::optional<FileMeta> root_meta;  // the mounted directory itself
  std::vector<PlacedFile> files;      // container-side paths below `mount`

  bool operator==(const SharedVolume&) const = default;
};

struct NetMatch {
  rsrc::NetAddress bound;
  int bound_container = 0;
  rsrc::NetAddress peer;
  int peer_container = 0;

  bool operator==(const NetMatch&) const = default;
};

inline constexpr int kPlanVersion = 1;
inline constexpr const char* kRpeDir = "/.slimpart/rpe";

struct PlacementPlan {
  int version = kPlanVersion;
  std::vector<ContainerPlan> containers;
  std::vector<SharedVolume> volumes;
  bool shared_net = false;
  std::vector<NetMatch> net_matches;
  std::vector<std::string> entry_argv;
  std::string entry_exe;
  int entry_container = 0;
  std::vector<std::string> skipped;  // runtime-created or runtime-provided paths
  std::vector<std::string> warnings;

  bool operator==(const PlacementPlan&) const = default;
};

struct PlanOptions {
  std::vector<std::string> runtime_prefixes{"/proc", "/sys", "/dev"};
  std::vector<std::string> names;  // container names by index; defaults to c<i>
  std::vector<std::string> entry_argv;
  std::string entry_exe;
  // Also place what the kernel needs to start each executable but never shows
  // in a trace: leaf symlinks of the executable path and its interpreter chain.
  bool exe_dependencies = true;
};

// The extra paths `exe_dependencies` adds for one executable, in load order.
std::vector<std::string> executable_dependencies(const std::string& exe, const MetadataSource& source);

// Throws MissingSourceFile listing every read-only path absent from `source`.
PlacementPlan plan_placement(const partition::PartitionMap& pm,
                             const std::map<std::string, attribution::ExeProfile>& profiles,
                             const std::vector<attribution::Edge>& blocked, const MetadataSource& source,
                             const std::set<std::string>& deleted = {}, const PlanOptions& opts = {});

// Invariant checks used by tests and by the driver after planning. Each
// returns an empty string when the property holds, else a description.
std::string check_closure(const PlacementPlan& plan);
// Path resources are joined by the location they resolve to in `source`.
std::string check_exclusive_uniqueness(const PlacementPlan& plan, const AccessSummary& acc,
                                       const MetadataSource& source, const PlanOptions& opts = {});
std::string check_sharing_soundness(const PlacementPlan& plan, const AccessSummary& acc,
                                    const MetadataSource& source, const PlanOptions& opts = {});
std::string check_completeness(const PlacementPlan& plan, const AccessSummary& acc,
                               const MetadataSource& source, const PlanOptions& opts = {});

}  // namespace slimpart::placement
