#include "slimpart/placement.hpp"

#include <elf.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <unordered_map>

#include "slimpart/error.hpp"
#include "slimpart/path.hpp"

namespace slimpart::placement {

using rsrc::Resource;
using rsrc::ResourceKind;

std::string_view to_string(FileType t) {
  switch (t) {
    case FileType::Regular: return "file";
    case FileType::Directory: return "dir";
    case FileType::Symlink: return "symlink";
    case FileType::Fifo: return "fifo";
    case FileType::Socket: return "socket";
    case FileType::CharDevice: return "chardev";
    case FileType::BlockDevice: return "blockdev";
  }
  return "file";
}

std::optional<FileType> file_type_from_string(std::string_view s) {
  for (auto t : {FileType::Regular, FileType::Directory, FileType::Symlink, FileType::Fifo, FileType::Socket,
                 FileType::CharDevice, FileType::BlockDevice}) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Exclusive: return "exclusive";
    case Role::Duplicate: return "duplicate";
    case Role::Shared: return "shared";
    case Role::Ancestor: return "ancestor";
    case Role::MountPoint: return "mountpoint";
  }
  return "exclusive";
}

std::optional<Role> role_from_string(std::string_view s) {
  for (auto r : {Role::Exclusive, Role::Duplicate, Role::Shared, Role::Ancestor, Role::MountPoint}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

std::string_view to_string(Classification::Kind k) {
  switch (k) {
    case Classification::Kind::Exclusive: return "exclusive";
    case Classification::Kind::Duplicate: return "duplicate";
    case Classification::Kind::SharedVolume: return "shared-volume";
    case Classification::Kind::NetworkLink: return "network";
  }
  return "exclusive";
}

DirectorySource::DirectorySource(std::string root) : root_(std::move(root)) {
  while (root_.size() > 1 && root_.back() == '/') root_.pop_back();
}

std::optional<FileMeta> DirectorySource::lookup(const std::string& p) const {
  std::string host = p == "/" ? root_ : root_ + p;
  struct stat st {};
  if (::lstat(host.c_str(), &st) != 0) return std::nullopt;
  FileMeta m;
  switch (st.st_mode & S_IFMT) {
    case S_IFDIR: m.type = FileType::Directory; break;
    case S_IFLNK: m.type = FileType::Symlink; break;
    case S_IFIFO: m.type = FileType::Fifo; break;
    case S_IFSOCK: m.type = FileType::Socket; break;
    case S_IFCHR: m.type = FileType::CharDevice; break;
    case S_IFBLK: m.type = FileType::BlockDevice; break;
    default: m.type = FileType::Regular; break;
  }
  m.mode = st.st_mode & 07777;
  m.uid = st.st_uid;
  m.gid = st.st_gid;
  m.mtime_sec = st.st_mtim.tv_sec;
  m.mtime_nsec = st.st_mtim.tv_nsec;
  m.size = m.type == FileType::Regular ? static_cast<std::uint64_t>(st.st_size) : 0;
  if (m.type == FileType::Symlink) {
    std::string buf(static_cast<std::size_t>(st.st_size > 0 ? st.st_size : 256) + 1, '\0');
    auto n = ::readlink(host.c_str(), buf.data(), buf.size());
    if (n < 0) return std::nullopt;
    buf.resize(static_cast<std::size_t>(n));
    m.link_target = std::move(buf);
  }
  return m;
}

std::optional<std::string> MetadataSource::interpreter(const std::string&) const { return std::nullopt; }

namespace {

template <class Ehdr, class Phdr>
std::optional<std::string> elf_interp(int fd) {
  Ehdr eh{};
  if (::pread(fd, &eh, sizeof eh, 0) != static_cast<ssize_t>(sizeof eh)) return std::nullopt;
  if (eh.e_phentsize != sizeof(Phdr)) return std::nullopt;
  for (unsigned i = 0; i < eh.e_phnum; ++i) {
    Phdr ph{};
    auto off = static_cast<off_t>(eh.e_phoff + i * sizeof(Phdr));
    if (::pread(fd, &ph, sizeof ph, off) != static_cast<ssize_t>(sizeof ph)) return std::nullopt;
    if (ph.p_type != PT_INTERP) continue;
    if (ph.p_filesz == 0 || ph.p_filesz > 4096) return std::nullopt;
    std::string s(static_cast<std::size_t>(ph.p_filesz), '\0');
    if (::pread(fd, s.data(), s.size(), static_cast<off_t>(ph.p_offset)) != static_cast<ssize_t>(s.size())) {
      return std::nullopt;
    }
    s.resize(std::strlen(s.c_str()));
    return s;
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::string> DirectorySource::interpreter(const std::string& p) const {
  std::string host = root_ + p;
  int fd = ::open(host.c_str(), O_RDONLY | O_NOFOLLOW | O_CLOEXEC | O_NONBLOCK);
  if (fd < 0) return std::nullopt;
  std::optional<std::string> out;
  char head[256];
  ssize_t n = ::pread(fd, head, sizeof head, 0);
  if (n >= 4 && std::memcmp(head, ELFMAG, SELFMAG) == 0 && head[EI_DATA] == ELFDATA2LSB) {
    if (head[EI_CLASS] == ELFCLASS64) out = elf_interp<Elf64_Ehdr, Elf64_Phdr>(fd);
    if (head[EI_CLASS] == ELFCLASS32) out = elf_interp<Elf32_Ehdr, Elf32_Phdr>(fd);
  } else if (n > 2 && head[0] == '#' && head[1] == '!') {
    std::string_view line(head + 2, static_cast<std::size_t>(n - 2));
    line = line.substr(0, line.find('\n'));
    auto b = line.find_first_not_of(" \t");
    if (b != std::string_view::npos) {
      line.remove_prefix(b);
      out = std::string(line.substr(0, line.find_first_of(" \t\r")));
    }
  }
  ::close(fd);
  return out;
}

std::optional<std::string> MemorySource::interpreter(const std::string& p) const {
  auto it = interpreters.find(p);
  if (it == interpreters.end()) return std::nullopt;
  return it->second;
}

std::optional<FileMeta> MemorySource::lookup(const std::string& p) const {
  auto it = entries.find(p);
  if (it == entries.end()) return std::nullopt;
  return it->second;
}

void MemorySource::add(const std::string& p, FileMeta meta) {
  for (const auto& a : path::ancestors(p)) {
    if (!entries.count(a)) entries[a] = FileMeta{FileType::Directory, 0755, 0, 0, 0, 0, 0, std::nullopt};
  }
  entries[p] = std::move(meta);
}

std::set<int> AccessEntry::accessors() const {
  std::set<int> out = readers;
  out.insert(writers.begin(), writers.end());
  return out;
}

AccessSummary summarize_access(const partition::PartitionMap& pm,
                               const std::map<std::string, attribution::ExeProfile>& profiles,
                               const std::set<std::string>& deleted) {
  AccessSummary acc;
  for (const auto& [exe, prof] : profiles) {
    auto it = pm.assign.find(exe);
    if (it == pm.assign.end()) {
      throw Error(ErrorKind::Precondition, "profiled executable not assigned to a container: " + exe);
    }
    for (const auto& r : prof.reads) acc[r].readers.insert(it->second);
    for (const auto& r : prof.writes) acc[r].writers.insert(it->second);
  }
  for (auto& [r, e] : acc) {
    if (r.is_path()) e.deleted = deleted.count(r.path) != 0;
  }
  return acc;
}

Classification classify_resource(const Resource& r, const AccessEntry& acc) {
  Classification c;
  c.containers = acc.accessors();
  if (r.kind == ResourceKind::NetSocket) {
    c.kind = Classification::Kind::NetworkLink;
  } else if (c.containers.size() <= 1) {
    c.kind = Classification::Kind::Exclusive;
  } else if (acc.writers.empty()) {
    c.kind = Classification::Kind::Duplicate;
  } else {
    c.kind = Classification::Kind::SharedVolume;
    c.volume = path::parent(r.path);
  }
  return c;
}

std::set<std::string> path_closure(const std::set<std::string>& paths) {
  std::set<std::string> out;
  for (const auto& p : paths) {
    if (p == "/") continue;
    out.insert(p);
    for (auto& a : path::ancestors(p)) out.insert(std::move(a));
  }
  return out;
}

bool is_wildcard_host(std::string_view h) { return h == "0.0.0.0" || h == "::" || h == "*" || h.empty(); }

bool is_loopback_host(std::string_view h) {
  return h.rfind("127.", 0) == 0 || h == "::1" || h == "localhost" || h.rfind("::ffff:127.", 0) == 0;
}

bool match_socket_addrs(const rsrc::NetAddress& bound, const rsrc::NetAddress& peer) {
  if (bound.port != peer.port) return false;
  if (bound.host == peer.host) return true;
  if (is_wildcard_host(bound.host)) return true;
  return is_loopback_host(bound.host) && is_loopback_host(peer.host);
}

namespace {

bool under_prefix(const std::string& p, const std::vector<std::string>& prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(),
                     [&](const std::string& pre) { return path::is_within(p, pre); });
}

// Memoizing front for a metadata source plus ancestor symlink resolution.
class Resolver {
 public:
  explicit Resolver(const MetadataSource& src) : src_(src) {}

  const std::optional<FileMeta>& meta(const std::string& p) {
    auto it = cache_.find(p);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(p, src_.lookup(p)).first->second;
  }

  struct Resolved {
    std::string path;
    std::vector<std::string> links;  // ancestor symlinks crossed on the way
  };

  // Follows symlinks in ancestor position only; the leaf is left alone.
  Resolved resolve(const std::string& p) {
    Resolved out{p, {}};
    for (int hops = 0; hops < 40; ++hops) {
      auto comps = path::components(out.path);
      std::string cur = "/";
      bool restarted = false;
      for (std::size_t i = 0; i + 1 < comps.size(); ++i) {
        std::string next = path::join(cur, comps[i]);
        const auto& m = meta(next);
        if (m && m->type == FileType::Symlink && m->link_target) {
          out.links.push_back(next);
          std::string rest;
          for (std::size_t j = i + 1; j < comps.size(); ++j) rest += "/" + comps[j];
          std::string target = path::join(cur, *m->link_target);
          out.path = path::normalize(target + rest);
          restarted = true;
          break;
        }
        cur = std::move(next);
      }
      if (!restarted) return out;
    }
    return out;
  }

 private:
  const MetadataSource& src_;
  std::unordered_map<std::string, std::optional<FileMeta>> cache_;
};

std::vector<std::string> dependencies(const std::string& exe, const MetadataSource& source, Resolver& res) {
  std::vector<std::string> out;
  std::set<std::string> seen{exe};
  std::string cur = exe;
  for (int depth = 0; depth < 8; ++depth) {
    auto rv = res.resolve(cur);
    for (int hops = 0; hops < 40; ++hops) {
      const auto& m = res.meta(rv.path);
      if (!m || m->type != FileType::Symlink || !m->link_target) break;
      std::string target = path::join(path::parent(rv.path), *m->link_target);
      if (!seen.insert(target).second) return out;
      out.push_back(target);
      rv = res.resolve(target);
    }
    const auto& m = res.meta(rv.path);
    if (!m || m->type != FileType::Regular) break;
    auto interp = source.interpreter(rv.path);
    if (!interp || !path::is_absolute(*interp)) break;
    cur = path::normalize(*interp);
    if (!seen.insert(cur).second) break;
    out.push_back(cur);
  }
  return out;
}

int role_rank(Role r) {
  switch (r) {
    case Role::Ancestor: return 0;
    case Role::MountPoint: return 1;
    default: return 2;
  }
}

std::string volume_key(const std::string& mount, std::set<std::string>& used) {
  std::string key;
  for (char c : mount.substr(1)) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' || c == '-';
    key += ok ? c : '_';
  }
  if (key.empty()) key = "root";
  std::string base = key;
  for (int n = 2; !used.insert(key).second; ++n) key = base + "-" + std::to_string(n);
  return key;
}

struct Builder {
  const PlanOptions& opts;
  Resolver& res;
  PlacementPlan& plan;
  std::vector<std::map<std::string, PlacedFile>> trees;
  std::vector<std::map<std::string, PlacedFile>> vol_files;
  std::map<std::string, std::size_t> vol_by_mount;
  std::vector<std::vector<std::size_t>> mounts_of;  // container -> volume indices

  std::optional<std::size_t> volume_for(int c, const std::string& p) const {
    for (auto v : mounts_of[static_cast<std::size_t>(c)]) {
      if (path::is_within(p, plan.volumes[v].mount)) return v;
    }
    return std::nullopt;
  }

  static void upsert(std::map<std::string, PlacedFile>& m, const std::string& p, const FileMeta& meta, Role role) {
    auto it = m.find(p);
    if (it == m.end()) {
      m.emplace(p, PlacedFile{p, meta, role});
    } else if (role_rank(role) > role_rank(it->second.role)) {
      it->second.role = role;
    }
  }

  // Places p (which must exist in the source) and its ancestors into c.
  void place(int c, const std::string& p, Role role) {
    const auto& m = res.meta(p);
    if (!m) return;
    place_one(c, p, *m, role);
    for (const auto& a : path::ancestors(p)) {
      const auto& am = res.meta(a);
      if (am) place_one(c, a, *am, Role::Ancestor);
    }
  }

  void place_one(int c, const std::string& p, const FileMeta& m, Role role) {
    if (auto v = volume_for(c, p)) {
      if (p == plan.volumes[*v].mount) return;  // the mount point is added per member
      upsert(vol_files[*v], p, m, role == Role::Ancestor ? Role::Ancestor : Role::Shared);
    } else {
      upsert(trees[static_cast<std::size_t>(c)], p, m, role);
    }
  }
};

}  // namespace

PlacementPlan plan_placement(const partition::PartitionMap& pm,
                             const std::map<std::string, attribution::ExeProfile>& profiles,
                             const std::vector<attribution::Edge>& blocked, const MetadataSource& source,
                             const std::set<std::string>& deleted, const PlanOptions& opts) {
  PlacementPlan plan;
  const int n = pm.count();
  Resolver res(source);
  AccessSummary acc;
  if (opts.exe_dependencies) {
    auto augmented = profiles;
    for (auto& [exe, prof] : augmented) {
      for (auto& d : dependencies(exe, source, res)) prof.reads.insert(Resource::file(std::move(d)));
    }
    acc = summarize_access(pm, augmented, deleted);
  } else {
    acc = summarize_access(pm, profiles, deleted);
  }

  plan.containers.resize(static_cast<std::size_t>(n));
  auto blocks = pm.blocks();
  for (int i = 0; i < n; ++i) {
    auto& cp = plan.containers[static_cast<std::size_t>(i)];
    cp.index = i;
    cp.name = static_cast<std::size_t>(i) < opts.names.size() ? opts.names[static_cast<std::size_t>(i)]
                                                                : "c" + std::to_string(i);
    cp.exes = blocks[static_cast<std::size_t>(i)];
  }

  // Resolve every path resource once; entries that resolve to the same
  // location are joined.
  struct Want {
    AccessEntry entry;
    std::vector<std::string> links;
    std::vector<std::string> trace_paths;
  };
  std::map<std::string, Want> wants;
  std::set<std::string> skipped;
  for (const auto& [r, e] : acc) {
    const auto cs = e.accessors();
    for (int c : cs) {
      auto& cp = plan.containers[static_cast<std::size_t>(c)];
      cp.resources++;
      if (e.readers.count(c)) cp.reads++;
      if (e.writers.count(c)) cp.writes++;
      if (r.kind == ResourceKind::NetSocket) cp.net.push_back(r.net);
    }
    if (!r.is_path()) continue;
    if (under_prefix(r.path, opts.runtime_prefixes)) {
      skipped.insert(r.path);
      continue;
    }
    auto rv = res.resolve(r.path);
    auto& w = wants[rv.path];
    w.entry.readers.insert(e.readers.begin(), e.readers.end());
    w.entry.writers.insert(e.writers.begin(), e.writers.end());
    w.entry.deleted = w.entry.deleted || e.deleted;
    w.links.insert(w.links.end(), rv.links.begin(), rv.links.end());
    w.trace_paths.push_back(r.path);
  }

  // Shared volumes, nested mounts collapsed into the outermost one.
  std::map<std::string, std::set<int>> vols;
  for (const auto& [p, w] : wants) {
    auto cls = classify_resource(Resource::file(p), w.entry);
    if (cls.kind != Classification::Kind::SharedVolume) continue;
    if (cls.volume == "/") {
      plan.warnings.push_back("cannot share " + p + " through a volume at /; duplicated instead");
      continue;
    }
    vols[cls.volume].insert(cls.containers.begin(), cls.containers.end());
  }
  for (bool changed = true; changed;) {
    changed = false;
    for (auto outer = vols.begin(); outer != vols.end() && !changed; ++outer) {
      for (auto inner = std::next(outer); inner != vols.end(); ++inner) {
        if (path::is_within(inner->first, outer->first)) {
          outer->second.insert(inner->second.begin(), inner->second.end());
          vols.erase(inner);
          changed = true;
          break;
        }
      }
    }
  }

  Builder b{opts, res, plan, {}, {}, {}, {}};
  b.trees.resize(static_cast<std::size_t>(n));
  b.mounts_of.resize(static_cast<std::size_t>(n));
  std::set<std::string> used_keys;
  for (const auto& [mount, cs] : vols) {
    SharedVolume v;
    v.mount = mount;
    v.key = volume_key(mount, used_keys);
    v.containers.assign(cs.begin(), cs.end());
    v.root_meta = res.meta(mount);
    if (!v.root_meta) v.root_meta = FileMeta{FileType::Directory, 0755, 0, 0, 0, 0, 0, std::nullopt};
    b.vol_by_mount[mount] = plan.volumes.size();
    for (int c : cs) {
      b.mounts_of[static_cast<std::size_t>(c)].push_back(plan.volumes.size());
      plan.containers[static_cast<std::size_t>(c)].volumes.push_back({v.key, mount});
    }
    plan.volumes.push_back(std::move(v));
  }
  b.vol_files.resize(plan.volumes.size());
  for (const auto& v : plan.volumes) {
    for (int c : v.containers) {
      Builder::upsert(b.trees[static_cast<std::size_t>(c)], v.mount, *v.root_meta, Role::MountPoint);
      for (const auto& a : path::ancestors(v.mount)) {
        if (const auto& am = res.meta(a)) b.place_one(c, a, *am, Role::Ancestor);
      }
    }
  }

  std::vector<std::string> missing;
  for (const auto& [p, w] : wants) {
    auto cls = classify_resource(Resource::file(p), w.entry);
    Role role = cls.kind == Classification::Kind::Exclusive   ? Role::Exclusive
                : cls.kind == Classification::Kind::Duplicate ? Role::Duplicate
                                                              : Role::Shared;
    if (cls.kind == Classification::Kind::SharedVolume && cls.volume == "/") role = Role::Duplicate;
    const bool present = res.meta(p).has_value();
    if (!present) {
      if (w.entry.writers.empty() && !w.entry.deleted) {
        missing.insert(missing.end(), w.trace_paths.begin(), w.trace_paths.end());
      } else {
        skipped.insert(p);
      }
    }
    for (int c : cls.containers) {
      for (const auto& l : w.links) b.place(c, l, Role::Ancestor);
      if (present) {
        b.place(c, p, role);
      } else {
        for (const auto& a : path::ancestors(p)) {
          if (const auto& am = res.meta(a)) b.place_one(c, a, *am, Role::Ancestor);
        }
      }
    }
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    throw MissingSourceFile(std::move(missing));
  }

  // Stubs replace the callee binary in the caller's container.
  std::set<std::pair<int, std::string>> seen_stubs;
  for (const auto& [caller, callee] : blocked) {
    auto ca = pm.assign.find(caller);
    auto cb = pm.assign.find(callee);
    if (ca == pm.assign.end() || cb == pm.assign.end() || ca->second == cb->second) continue;
    auto rv = res.resolve(callee);
    if (!seen_stubs.emplace(ca->second, rv.path).second) continue;
    auto& caller_plan = plan.containers[static_cast<std::size_t>(ca->second)];
    auto& callee_plan = plan.containers[static_cast<std::size_t>(cb->second)];
    StubSpec s;
    s.path = rv.path;
    s.target = cb->second;
    s.target_name = callee_plan.name;
    s.socket = std::string(kRpeDir) + "/" + callee_plan.name + ".sock";
    callee_plan.rpe_server = true;
    for (const auto& l : rv.links) b.place(ca->second, l, Role::Ancestor);
    if (b.volume_for(ca->second, rv.path)) {
      plan.warnings.push_back("stub " + rv.path + " lies inside a shared volume of " + caller_plan.name);
    }
    b.trees[static_cast<std::size_t>(ca->second)].erase(rv.path);
    for (const auto& a : path::ancestors(rv.path)) {
      if (const auto& am = res.meta(a)) b.place_one(ca->second, a, *am, Role::Ancestor);
    }
    caller_plan.stubs.push_back(std::move(s));
  }

  // Cross-container socket matches switch on the shared network namespace.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      for (const auto& a : plan.containers[static_cast<std::size_t>(i)].net) {
        if (!is_wildcard_host(a.host) && !is_loopback_host(a.host)) continue;
        for (const auto& p : plan.containers[static_cast<std::size_t>(j)].net) {
          if (a.protocol != p.protocol && a.protocol != "ip" && p.protocol != "ip") continue;
          if (a == p && i > j) continue;
          if (match_socket_addrs(a, p)) plan.net_matches.push_back({a, i, p, j});
        }
      }
    }
  }
  plan.shared_net = !plan.net_matches.empty();

  for (int i = 0; i < n; ++i) {
    auto& cp = plan.containers[static_cast<std::size_t>(i)];
    cp.shared_net = plan.shared_net;
    for (auto& [p, f] : b.trees[static_cast<std::size_t>(i)]) cp.files.push_back(std::move(f));
    std::sort(cp.stubs.begin(), cp.stubs.end(), [](const auto& x, const auto& y) { return x.path < y.path; });
  }
  for (std::size_t v = 0; v < plan.volumes.size(); ++v) {
    for (auto& [p, f] : b.vol_files[v]) plan.volumes[v].files.push_back(std::move(f));
  }
  plan.skipped.assign(skipped.begin(), skipped.end());
  plan.entry_argv = opts.entry_argv;
  plan.entry_exe = opts.entry_exe;
  if (auto it = pm.assign.find(opts.entry_exe); it != pm.assign.end()) plan.entry_container = it->second;
  return plan;
}

std::vector<std::string> executable_dependencies(const std::string& exe, const MetadataSource& source) {
  Resolver res(source);
  return dependencies(exe, source, res);
}

namespace {

using PathIndex = std::map<std::string, const PlacedFile*>;

PathIndex index_files(const std::vector<PlacedFile>& files) {
  PathIndex idx;
  for (const auto& f : files) idx[f.path] = &f;
  return idx;
}

const SharedVolume* mounted_volume(const PlacementPlan& plan, const ContainerPlan& cp, const std::string& p) {
  for (const auto& vm : cp.volumes) {
    if (!path::is_within(p, vm.mount)) continue;
    for (const auto& v : plan.volumes) {
      if (v.key == vm.key) return &v;
    }
  }
  return nullptr;
}

}  // namespace

std::string check_closure(const PlacementPlan& plan) {
  for (const auto& cp : plan.containers) {
    auto idx = index_files(cp.files);
    for (const auto& f : cp.files) {
      for (const auto& a : path::ancestors(f.path)) {
        if (!idx.count(a)) return cp.name + ": " + f.path + " lacks ancestor " + a;
      }
    }
    for (const auto& vm : cp.volumes) {
      auto it = idx.find(vm.mount);
      if (it == idx.end() || it->second->role != Role::MountPoint) {
        return cp.name + ": no mount point for volume " + vm.key;
      }
    }
  }
  for (const auto& v : plan.volumes) {
    if (v.containers.size() < 2) return "volume " + v.key + " mounted in fewer than two containers";
    auto idx = index_files(v.files);
    for (const auto& f : v.files) {
      if (!path::is_within(f.path, v.mount) || f.path == v.mount) {
        return "volume " + v.key + " holds foreign path " + f.path;
      }
      for (const auto& a : path::ancestors(f.path)) {
        if (path::is_within(a, v.mount) && a != v.mount && !idx.count(a)) {
          return "volume " + v.key + ": " + f.path + " lacks ancestor " + a;
        }
      }
    }
  }
  return {};
}

namespace {

// Path resources joined by the location they resolve to, as the planner
// joins them.
std::map<std::string, AccessEntry> by_location(const AccessSummary& acc, Resolver& res, const PlanOptions& opts) {
  std::map<std::string, AccessEntry> out;
  for (const auto& [r, e] : acc) {
    if (!r.is_path() || under_prefix(r.path, opts.runtime_prefixes)) continue;
    auto& j = out[res.resolve(r.path).path];
    j.readers.insert(e.readers.begin(), e.readers.end());
    j.writers.insert(e.writers.begin(), e.writers.end());
  }
  return out;
}

}  // namespace

std::string check_exclusive_uniqueness(const PlacementPlan& plan, const AccessSummary& acc,
                                       const MetadataSource& source, const PlanOptions& opts) {
  Resolver res(source);
  for (const auto& [p, e] : by_location(acc, res, opts)) {
    const auto cs = e.accessors();
    if (cs.size() != 1) continue;
    const int owner = *cs.begin();
    for (const auto& cp : plan.containers) {
      if (cp.index == owner) continue;
      for (const auto& f : cp.files) {
        if (f.path == p && f.role != Role::Ancestor && f.role != Role::MountPoint) {
          return p + " is exclusive to container " + std::to_string(owner) + " but placed in " + cp.name;
        }
      }
    }
    for (const auto& v : plan.volumes) {
      bool mounted = std::find(v.containers.begin(), v.containers.end(), owner) != v.containers.end();
      for (const auto& f : v.files) {
        if (f.path == p && !mounted) return p + " placed in a volume its owner does not mount";
      }
    }
  }
  return {};
}

std::string check_sharing_soundness(const PlacementPlan& plan, const AccessSummary& acc,
                                    const MetadataSource& source, const PlanOptions& opts) {
  Resolver res(source);
  const auto joined = by_location(acc, res, opts);
  for (const auto& v : plan.volumes) {
    if (v.containers.size() < 2) return "volume " + v.key + " has fewer than two containers";
    bool justified = std::any_of(joined.begin(), joined.end(), [&](const auto& kv) {
      return path::is_within(kv.first, v.mount) && !kv.second.writers.empty() && kv.second.accessors().size() >= 2;
    });
    if (!justified) return "volume " + v.key + " has no cross-container written resource";
  }
  for (const auto& [p, e] : joined) {
    if (e.writers.empty() || e.accessors().size() < 2 || path::parent(p) == "/") continue;
    for (int c : e.accessors()) {
      const auto& cp = plan.containers[static_cast<std::size_t>(c)];
      if (!mounted_volume(plan, cp, p)) return p + " is shared but container " + cp.name + " mounts no volume over it";
    }
  }
  return {};
}

std::string check_completeness(const PlacementPlan& plan, const AccessSummary& acc,
                               const MetadataSource& source, const PlanOptions& opts) {
  Resolver res(source);
  std::vector<PathIndex> trees;
  for (const auto& cp : plan.containers) trees.push_back(index_files(cp.files));
  for (const auto& [r, e] : acc) {
    if (!r.is_path() || under_prefix(r.path, opts.runtime_prefixes)) continue;
    auto p = res.resolve(r.path).path;
    if (!res.meta(p)) continue;
    for (int c : e.readers) {
      const auto& cp = plan.containers[static_cast<std::size_t>(c)];
      if (trees[static_cast<std::size_t>(c)].count(p)) continue;
      if (std::any_of(cp.stubs.begin(), cp.stubs.end(), [&](const StubSpec& s) { return s.path == p; })) continue;
      if (const auto* v = mounted_volume(plan, cp, p)) {
        if (p == v->mount || std::any_of(v->files.begin(), v->files.end(),
                                         [&](const PlacedFile& f) { return f.path == p; })) {
          continue;
        }
      }
      return r.path + " is read by " + cp.name + " but not reachable there";
    }
  }
  return {};
}

}  // namespace slimpart::placement
