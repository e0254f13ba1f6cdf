#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "slimpart/trace.hpp"

// Resource identification: the system state fold and the per-event
// (reads, writes) function over parsed system-call events.
namespace slimpart::rsrc {

enum class ResourceKind { File, Fifo, LocalSocket, NetSocket };

std::string_view to_string(ResourceKind kind);
std::optional<ResourceKind> resource_kind_from_string(std::string_view s);

struct NetAddress {
  std::string protocol;  // "tcp", "udp", or "ip" when unknown
  std::string host;      // textual address as the program gave it
  std::uint16_t port = 0;

  auto operator<=>(const NetAddress&) const = default;
  std::string str() const;
};

struct Resource {
  ResourceKind kind = ResourceKind::File;
  std::string path;  // File / Fifo / LocalSocket: absolute, normalized
  NetAddress net;    // NetSocket only

  static Resource file(std::string p) { return {ResourceKind::File, std::move(p), {}}; }
  static Resource fifo(std::string p) { return {ResourceKind::Fifo, std::move(p), {}}; }
  static Resource local_socket(std::string p) { return {ResourceKind::LocalSocket, std::move(p), {}}; }
  static Resource net_socket(NetAddress a) { return {ResourceKind::NetSocket, {}, std::move(a)}; }

  bool is_path() const noexcept { return kind != ResourceKind::NetSocket; }
  std::string str() const;

  auto operator<=>(const Resource&) const = default;
};

using ResourceSet = std::set<Resource>;

struct EffectDelta {
  ResourceSet reads;
  ResourceSet writes;
  // Paths removed and not recreated by the end of the run (tombstones).
  std::set<std::string> deleted;

  bool empty() const noexcept { return reads.empty() && writes.empty(); }
  void merge(const EffectDelta& other);
  bool operator==(const EffectDelta&) const = default;
};

struct FdEntry {
  std::optional<Resource> resource;  // nullopt: anonymous (pipe, socketpair, tty, ...)
  std::optional<std::string> path;   // what the fd names on the filesystem, if anything
  std::string socket_family;         // "AF_INET", "AF_UNIX", ... for sockets
  std::string socket_type;           // "SOCK_STREAM", "SOCK_DGRAM", ...
  std::optional<NetAddress> bound;
  bool cloexec = false;

  static FdEntry anonymous() { return {}; }
  bool operator==(const FdEntry&) const = default;
};

using FdTable = std::map<int, FdEntry>;

struct ProcState {
  std::int64_t tgid = 0;
  std::int64_t parent = 0;
  int fs_id = 0;   // shared by CLONE_FS threads
  int fdt_id = 0;  // shared by CLONE_FILES threads
  std::string exe;

  bool operator==(const ProcState&) const = default;
};

struct Diagnostics {
  std::size_t unknown_tids = 0;
  std::size_t unresolvable_dirfd = 0;
  std::map<std::string, std::size_t> unhandled;
  std::vector<std::string> warnings;

  void warn(std::string msg);
  void merge(const Diagnostics& other);
};

class SystemState {
 public:
  std::map<std::int64_t, ProcState> procs;
  std::map<int, std::string> cwds;
  std::map<int, FdTable> fd_tables;
  std::set<std::string> tombstones;
  std::set<std::string> fifos;

  // Template for the trace's first process and for synthesized unknown tids.
  std::string root_cwd = "/";
  std::string root_exe;
  FdTable root_fds;

  const std::string& cwd(std::int64_t tid) const;
  const FdTable& fds(std::int64_t tid) const;
  FdTable& fds(std::int64_t tid);
  std::string& cwd_mut(std::int64_t tid);
  bool knows(std::int64_t tid) const { return procs.count(tid) != 0; }

  // Creates a process from the root template.
  ProcState& spawn_root(std::int64_t tid);

  int allocate_id() { return next_id_++; }

  bool operator==(const SystemState&) const = default;

 private:
  int next_id_ = 1;
};

// Gamma_0. Throws Error(Precondition) for a relative root_cwd. When root_tid is
// given the root process is created immediately; otherwise the first event's
// tid becomes the root process.
SystemState init_state(std::string root_cwd, std::string root_exe,
                       const std::map<int, Resource>& inherited_fds = {},
                       std::optional<std::int64_t> root_tid = std::nullopt);

// Raw path argument: the path string plus the dirfd argument it is relative to
// (nullopt means the cwd).
struct RawPath {
  std::string path;
  std::optional<trace::Arg> dirfd;
};

// Absolute normalized path, or nullopt when a dirfd cannot be resolved.
std::optional<std::string> resolve_path(const SystemState& state, std::int64_t tid, const RawPath& raw);

// One step of the fold. Failed calls leave the state untouched and return an
// empty delta. Unknown tids are synthesized from the root template.
EffectDelta apply_event(SystemState& state, const trace::SyscallEvent& e, Diagnostics* diag = nullptr);

// Union of per-event deltas along the state sequence starting at g0.
// `deleted` holds the tombstones left at the end of the log.
EffectDelta rsrc_log(const trace::Log& log, const SystemState& g0, Diagnostics* diag = nullptr);

EffectDelta rsrc_execution_log(const trace::ExecutionLog& el, const SystemState& g0,
                               Diagnostics* diag = nullptr);

// Parsed form of a strace sockaddr structure.
struct SockAddr {
  std::string family;  // "AF_UNIX", "AF_INET", "AF_INET6", ...
  std::string path;    // AF_UNIX
  bool abstract = false;
  std::string host;    // AF_INET*
  std::uint16_t port = 0;
};

std::optional<SockAddr> parse_sockaddr(std::string_view text);

// True for calls that only operate through already-open descriptors.
bool is_fd_only(std::string_view name);

}  // namespace slimpart::rsrc
