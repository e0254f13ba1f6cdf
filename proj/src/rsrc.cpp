#include "slimpart/rsrc.hpp"

#include <charconv>
#include <functional>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "slimpart/error.hpp"
#include "slimpart/path.hpp"

namespace slimpart::rsrc {

using trace::Arg;
using trace::ArgKind;
using trace::SyscallEvent;

namespace {

constexpr int kAtFdcwd = -100;
constexpr std::size_t kMaxWarnings = 200;

// Linux open(2) flag values, for traces that print flags numerically.
constexpr std::uint64_t kOWronly = 01;
constexpr std::uint64_t kORdwr = 02;
constexpr std::uint64_t kOCreat = 0100;
constexpr std::uint64_t kOTrunc = 01000;
constexpr std::uint64_t kOAppend = 02000;
constexpr std::uint64_t kOCloexec = 02000000;

std::optional<std::int64_t> to_int(std::string_view s) {
  if (s.empty()) return std::nullopt;
  bool neg = s.front() == '-';
  if (neg) s.remove_prefix(1);
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    base = 16;
    s.remove_prefix(2);
  } else if (s.size() > 1 && s[0] == '0') {
    base = 8;
    s.remove_prefix(1);
  }
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return neg ? -static_cast<std::int64_t>(v) : static_cast<std::int64_t>(v);
}

std::vector<std::string_view> split_flags(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto bar = s.find('|', start);
    auto piece = s.substr(start, bar == std::string_view::npos ? s.npos : bar - start);
    while (!piece.empty() && piece.front() == ' ') piece.remove_prefix(1);
    while (!piece.empty() && piece.back() == ' ') piece.remove_suffix(1);
    out.push_back(piece);
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return out;
}

// Symbolic or numeric flag test. `bit` is used when the trace printed numbers.
bool has_flag(std::string_view flags, std::string_view name, std::uint64_t bit = 0) {
  std::uint64_t numeric = 0;
  for (auto piece : split_flags(flags)) {
    if (piece == name) return true;
    if (auto v = to_int(piece)) numeric |= static_cast<std::uint64_t>(*v);
  }
  return bit != 0 && (numeric & bit) != 0;
}

std::optional<int> fd_of(const Arg& a) {
  if (a.text == "AT_FDCWD") return kAtFdcwd;
  if (a.kind != ArgKind::Fd && a.kind != ArgKind::Integer) return std::nullopt;
  auto v = to_int(a.text);
  if (!v) return std::nullopt;
  return static_cast<int>(*v);
}

const Arg* arg_at(const SyscallEvent& e, std::size_t i) {
  return i < e.args.size() ? &e.args[i] : nullptr;
}

// Looks up "key=value" at the top level of a struct text or in key=value args.
std::optional<std::string> struct_field(std::string_view text, std::string_view key) {
  std::string needle(key);
  needle += '=';
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string_view::npos) {
    if (pos == 0 || text[pos - 1] == '{' || text[pos - 1] == ' ' || text[pos - 1] == ',') break;
    pos += needle.size();
  }
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t start = pos + needle.size();
  int depth = 0;
  bool quote = false;
  std::size_t i = start;
  for (; i < text.size(); ++i) {
    char c = text[i];
    if (quote) {
      if (c == '\\') ++i;
      else if (c == '"') quote = false;
      continue;
    }
    if (c == '"') quote = true;
    else if (c == '{' || c == '[' || c == '(') ++depth;
    else if (c == '}' || c == ']' || c == ')') {
      if (depth == 0) break;
      --depth;
    } else if (c == ',' && depth == 0) break;
  }
  return std::string(text.substr(start, i - start));
}

std::optional<std::string> quoted_after(std::string_view text, std::size_t from) {
  auto q = text.find('"', from);
  if (q == std::string_view::npos) return std::nullopt;
  std::size_t i = q + 1;
  while (i < text.size() && text[i] != '"') {
    if (text[i] == '\\') ++i;
    ++i;
  }
  return trace::unescape(text.substr(q + 1, std::min(i, text.size()) - q - 1));
}

std::vector<int> int_array(std::string_view text) {
  std::vector<int> out;
  for (const auto& a : trace::parse_args(text.size() >= 2 ? text.substr(1, text.size() - 2) : text)) {
    if (auto fd = fd_of(a)) out.push_back(*fd);
  }
  return out;
}

std::string protocol_for(const FdEntry* entry) {
  if (entry) {
    if (entry->socket_type.find("SOCK_STREAM") != std::string::npos) return "tcp";
    if (entry->socket_type.find("SOCK_DGRAM") != std::string::npos) return "udp";
    if (entry->path) {
      const auto& p = *entry->path;
      if (p.rfind("TCP", 0) == 0) return "tcp";
      if (p.rfind("UDP", 0) == 0) return "udp";
    }
  }
  return "ip";
}

// Handler context for one event.
struct Ctx {
  SystemState& st;
  const SyscallEvent& e;
  Diagnostics* diag;
  EffectDelta delta;

  void warn(std::string msg) {
    if (diag) diag->warn(std::move(msg));
  }

  std::optional<std::string> path_arg(std::size_t path_idx, std::optional<std::size_t> dirfd_idx) {
    const Arg* p = arg_at(e, path_idx);
    if (!p || p->kind != ArgKind::String) return std::nullopt;
    RawPath raw{p->text, std::nullopt};
    if (dirfd_idx) {
      if (const Arg* d = arg_at(e, *dirfd_idx)) raw.dirfd = *d;
    }
    auto r = resolve_path(st, e.tid, raw);
    if (!r) {
      if (diag) ++diag->unresolvable_dirfd;
      warn("unresolvable dirfd in " + e.name + " (tid " + std::to_string(e.tid) + "); skipped");
    }
    return r;
  }

  FdTable& fds() { return st.fds(e.tid); }

  FdEntry* fd_entry(int fd) {
    auto& t = fds();
    auto it = t.find(fd);
    return it == t.end() ? nullptr : &it->second;
  }

  Resource path_resource(const std::string& p) const {
    return st.fifos.count(p) ? Resource::fifo(p) : Resource::file(p);
  }

  void read(Resource r) { delta.reads.insert(std::move(r)); }
  void write(Resource r) { delta.writes.insert(std::move(r)); }

  void created(const std::string& p) { st.tombstones.erase(p); }
  void removed(const std::string& p) {
    st.tombstones.insert(p);
    st.fifos.erase(p);
  }

  void set_fd(int fd, FdEntry entry) {
    if (fd < 0) return;
    fds()[fd] = std::move(entry);
  }

  // Args of an empty path with AT_EMPTY_PATH operate on the dirfd itself.
  bool empty_path(std::size_t path_idx) const {
    const Arg* p = arg_at(e, path_idx);
    return p && p->kind == ArgKind::String && p->text.empty();
  }
};

using Handler = std::function<void(Ctx&)>;

void do_open(Ctx& c, std::size_t path_idx, std::optional<std::size_t> dirfd_idx, std::string flags) {
  auto p = c.path_arg(path_idx, dirfd_idx);
  if (!p) return;
  bool creat = has_flag(flags, "O_CREAT", kOCreat);
  bool modify = has_flag(flags, "O_TRUNC", kOTrunc) || has_flag(flags, "O_APPEND", kOAppend) ||
                has_flag(flags, "O_WRONLY", kOWronly) || has_flag(flags, "O_RDWR", kORdwr);
  auto res = c.path_resource(*p);
  auto touch = [&](const Resource& r) {
    if (r.kind == ResourceKind::Fifo) {
      if (!creat) c.read(r);
      c.write(r);
    } else if (creat) {
      c.write(r);
    } else {
      c.read(r);
      if (modify) c.write(r);
    }
  };
  touch(res);
  if (creat && res.kind != ResourceKind::Fifo) c.created(*p);
  // The -y annotation on the returned fd names the file the kernel actually
  // opened. When a symlink was crossed it differs from the named path, and the
  // link target is needed as well.
  if (const auto& ann = c.e.ret_annotation; ann && path::is_absolute(*ann) && res.kind == ResourceKind::File) {
    auto real = path::normalize(*ann);
    if (real != *p) touch(Resource::file(real));
  }
  FdEntry entry;
  entry.resource = res;
  entry.path = *p;
  entry.cloexec = has_flag(flags, "O_CLOEXEC", kOCloexec);
  c.set_fd(static_cast<int>(c.e.ret), std::move(entry));
}

void do_exist(Ctx& c, std::size_t path_idx, std::optional<std::size_t> dirfd_idx) {
  if (dirfd_idx && c.empty_path(path_idx)) return;
  if (auto p = c.path_arg(path_idx, dirfd_idx)) c.read(c.path_resource(*p));
}

void do_modify(Ctx& c, std::size_t path_idx, std::optional<std::size_t> dirfd_idx) {
  if (dirfd_idx && c.empty_path(path_idx)) return;
  const Arg* p = arg_at(c.e, path_idx);
  if (!p || p->kind != ArgKind::String) return;  // NULL path: fd-only form
  if (auto r = c.path_arg(path_idx, dirfd_idx)) c.write(c.path_resource(*r));
}

void do_create(Ctx& c, std::size_t path_idx, std::optional<std::size_t> dirfd_idx) {
  if (auto p = c.path_arg(path_idx, dirfd_idx)) {
    c.write(c.path_resource(*p));
    c.created(*p);
  }
}

void do_remove(Ctx& c, std::size_t path_idx, std::optional<std::size_t> dirfd_idx) {
  if (auto p = c.path_arg(path_idx, dirfd_idx)) {
    c.write(c.path_resource(*p));
    c.removed(*p);
  }
}

void do_rename(Ctx& c, std::size_t from_idx, std::optional<std::size_t> from_dirfd, std::size_t to_idx,
               std::optional<std::size_t> to_dirfd) {
  auto from = c.path_arg(from_idx, from_dirfd);
  auto to = c.path_arg(to_idx, to_dirfd);
  if (!from || !to) return;
  auto src = c.path_resource(*from);
  c.read(src);
  c.write(src);
  bool fifo = c.st.fifos.count(*from) != 0;
  c.removed(*from);
  if (fifo) c.st.fifos.insert(*to);
  c.write(c.path_resource(*to));
  c.created(*to);
}

void do_link(Ctx& c, std::size_t from_idx, std::optional<std::size_t> from_dirfd, std::size_t to_idx,
             std::optional<std::size_t> to_dirfd) {
  auto from = c.path_arg(from_idx, from_dirfd);
  auto to = c.path_arg(to_idx, to_dirfd);
  if (!from || !to) return;
  c.read(c.path_resource(*from));
  c.write(c.path_resource(*to));
  c.created(*to);
}

void do_mknod(Ctx& c, std::size_t path_idx, std::optional<std::size_t> dirfd_idx, std::size_t mode_idx) {
  auto p = c.path_arg(path_idx, dirfd_idx);
  if (!p) return;
  const Arg* mode = arg_at(c.e, mode_idx);
  if (mode && has_flag(mode->text, "S_IFIFO", 010000)) {
    c.st.fifos.insert(*p);
  }
  c.write(c.path_resource(*p));
  c.created(*p);
}

void do_chdir(Ctx& c) {
  auto p = c.path_arg(0, std::nullopt);
  if (!p) return;
  c.read(Resource::file(*p));
  c.st.cwd_mut(c.e.tid) = *p;
}

void do_fchdir(Ctx& c) {
  const Arg* a = arg_at(c.e, 0);
  if (!a) return;
  if (a->annotation && path::is_absolute(*a->annotation)) {
    c.st.cwd_mut(c.e.tid) = path::normalize(*a->annotation);
    return;
  }
  if (auto fd = fd_of(*a)) {
    if (auto* entry = c.fd_entry(*fd); entry && entry->path) c.st.cwd_mut(c.e.tid) = *entry->path;
  }
}

void do_exec(Ctx& c, std::size_t path_idx, std::optional<std::size_t> dirfd_idx) {
  auto p = c.path_arg(path_idx, dirfd_idx);
  if (!p) return;
  c.read(Resource::file(*p));
  auto& self = c.st.procs.at(c.e.tid);
  const auto tgid = self.tgid;
  // The exec'ing thread takes over the thread group; other threads vanish.
  for (auto it = c.st.procs.begin(); it != c.st.procs.end();) {
    if (it->first != c.e.tid && it->second.tgid == tgid) {
      it = c.st.procs.erase(it);
    } else {
      ++it;
    }
  }
  auto& proc = c.st.procs.at(c.e.tid);
  proc.tgid = c.e.tid;
  proc.exe = *p;
  FdTable kept;
  for (const auto& [fd, entry] : c.st.fd_tables.at(proc.fdt_id)) {
    if (!entry.cloexec) kept.emplace(fd, entry);
  }
  proc.fdt_id = c.st.allocate_id();
  c.st.fd_tables.emplace(proc.fdt_id, std::move(kept));
}

void do_clone(Ctx& c, std::string_view flags) {
  if (c.e.ret <= 0) return;
  const std::int64_t child = c.e.ret;
  const ProcState parent = c.st.procs.at(c.e.tid);
  ProcState kid = parent;
  kid.parent = c.e.tid;
  kid.tgid = has_flag(flags, "CLONE_THREAD") ? parent.tgid : child;
  if (has_flag(flags, "CLONE_THREAD")) kid.parent = parent.parent;
  if (!has_flag(flags, "CLONE_FS")) {
    kid.fs_id = c.st.allocate_id();
    c.st.cwds[kid.fs_id] = c.st.cwds.at(parent.fs_id);
  }
  if (!has_flag(flags, "CLONE_FILES")) {
    kid.fdt_id = c.st.allocate_id();
    c.st.fd_tables[kid.fdt_id] = c.st.fd_tables.at(parent.fdt_id);
  }
  c.st.procs[child] = kid;
}

void do_socket(Ctx& c) {
  FdEntry entry;
  if (const Arg* d = arg_at(c.e, 0)) entry.socket_family = d->text;
  if (const Arg* t = arg_at(c.e, 1)) {
    entry.socket_type = t->text;
    entry.cloexec = has_flag(t->text, "SOCK_CLOEXEC");
  }
  c.set_fd(static_cast<int>(c.e.ret), std::move(entry));
}

std::optional<Resource> unix_resource(Ctx& c, const SockAddr& sa) {
  if (sa.family != "AF_UNIX" || sa.abstract || sa.path.empty()) return std::nullopt;
  auto p = path::join(c.st.cwd(c.e.tid), sa.path);
  return Resource::local_socket(p);
}

std::optional<Resource> net_resource(Ctx& c, const SockAddr& sa, int fd) {
  if (sa.family != "AF_INET" && sa.family != "AF_INET6") return std::nullopt;
  return Resource::net_socket(NetAddress{protocol_for(c.fd_entry(fd)), sa.host, sa.port});
}

void do_bind(Ctx& c) {
  const Arg* fda = arg_at(c.e, 0);
  const Arg* addr = arg_at(c.e, 1);
  if (!fda || !addr) return;
  auto fd = fd_of(*fda);
  auto sa = parse_sockaddr(addr->text);
  if (!fd || !sa) return;
  if (auto r = unix_resource(c, *sa)) {
    c.read(Resource::file(path::parent(r->path)));
    c.write(*r);
    c.created(r->path);
    if (auto* entry = c.fd_entry(*fd)) entry->path = r->path;
  } else if (auto n = net_resource(c, *sa, *fd)) {
    c.write(*n);
    if (auto* entry = c.fd_entry(*fd)) entry->bound = n->net;
  }
}

// connect, and connectionless sends/receives naming a peer address.
void do_peer(Ctx& c, std::size_t addr_idx) {
  const Arg* fda = arg_at(c.e, 0);
  const Arg* addr = arg_at(c.e, addr_idx);
  if (!fda || !addr || addr->kind != ArgKind::Struct) return;
  auto fd = fd_of(*fda);
  auto sa = parse_sockaddr(addr->text);
  if (!fd || !sa) return;
  if (auto r = unix_resource(c, *sa)) {
    c.write(*r);
  } else if (auto n = net_resource(c, *sa, *fd)) {
    c.write(*n);
  }
}

void do_msg(Ctx& c) {
  const Arg* msg = arg_at(c.e, 1);
  const Arg* fda = arg_at(c.e, 0);
  if (!msg || !fda || msg->kind != ArgKind::Struct) return;
  auto name = struct_field(msg->text, "msg_name");
  auto fd = fd_of(*fda);
  if (!name || !fd) return;
  auto sa = parse_sockaddr(*name);
  if (!sa) return;
  if (auto r = unix_resource(c, *sa)) {
    c.write(*r);
  } else if (auto n = net_resource(c, *sa, *fd)) {
    c.write(*n);
  }
}

void do_accept(Ctx& c) {
  const Arg* fda = arg_at(c.e, 0);
  if (!fda) return;
  auto fd = fd_of(*fda);
  if (!fd) return;
  FdEntry accepted;
  if (auto* listener = c.fd_entry(*fd)) {
    accepted.socket_family = listener->socket_family;
    accepted.socket_type = listener->socket_type;
    if (listener->bound) {
      c.write(Resource::net_socket(*listener->bound));
      accepted.bound = listener->bound;
    }
  }
  if (c.e.name == "accept4") {
    if (const Arg* f = arg_at(c.e, 3)) accepted.cloexec = has_flag(f->text, "SOCK_CLOEXEC");
  }
  c.set_fd(static_cast<int>(c.e.ret), std::move(accepted));
}

void do_pipe(Ctx& c, std::size_t arr_idx, std::optional<std::size_t> flags_idx) {
  const Arg* arr = arg_at(c.e, arr_idx);
  if (!arr || arr->kind != ArgKind::Array) return;
  bool cloexec = false;
  if (flags_idx) {
    if (const Arg* f = arg_at(c.e, *flags_idx)) cloexec = has_flag(f->text, "O_CLOEXEC", kOCloexec);
  }
  for (int fd : int_array(arr->text)) {
    auto entry = FdEntry::anonymous();
    entry.cloexec = cloexec;
    c.set_fd(fd, entry);
  }
}

void do_dup(Ctx& c, bool cloexec) {
  const Arg* a = arg_at(c.e, 0);
  if (!a) return;
  auto fd = fd_of(*a);
  if (!fd) return;
  FdEntry copy;
  if (auto* src = c.fd_entry(*fd)) copy = *src;
  else if (a->annotation) copy.path = *a->annotation;
  copy.cloexec = cloexec;
  c.set_fd(static_cast<int>(c.e.ret), std::move(copy));
}

void do_fcntl(Ctx& c) {
  const Arg* a = arg_at(c.e, 0);
  const Arg* cmd = arg_at(c.e, 1);
  if (!a || !cmd) return;
  auto fd = fd_of(*a);
  if (!fd) return;
  if (cmd->text == "F_DUPFD" || cmd->text == "F_DUPFD_CLOEXEC") {
    do_dup(c, cmd->text == "F_DUPFD_CLOEXEC");
  } else if (cmd->text == "F_SETFD") {
    const Arg* v = arg_at(c.e, 2);
    if (auto* entry = c.fd_entry(*fd); entry && v) entry->cloexec = has_flag(v->text, "FD_CLOEXEC", 1);
  }
}

void do_close(Ctx& c) {
  if (const Arg* a = arg_at(c.e, 0)) {
    if (auto fd = fd_of(*a)) c.fds().erase(*fd);
  }
}

void do_close_range(Ctx& c) {
  const Arg* lo = arg_at(c.e, 0);
  const Arg* hi = arg_at(c.e, 1);
  if (!lo || !hi) return;
  auto first = to_int(lo->text);
  auto last = to_int(hi->text);
  if (!first) return;
  std::int64_t end = last ? *last : std::numeric_limits<int>::max();
  if (hi->text == "~0U" || hi->text == "-1") end = std::numeric_limits<int>::max();
  bool cloexec_only = false;
  if (const Arg* f = arg_at(c.e, 2)) cloexec_only = has_flag(f->text, "CLOSE_RANGE_CLOEXEC", 4);
  auto& t = c.fds();
  for (auto it = t.lower_bound(static_cast<int>(*first)); it != t.end() && it->first <= end;) {
    if (cloexec_only) {
      it->second.cloexec = true;
      ++it;
    } else {
      it = t.erase(it);
    }
  }
}

void do_anon_fd(Ctx& c) { c.set_fd(static_cast<int>(c.e.ret), FdEntry::anonymous()); }

const std::unordered_map<std::string_view, Handler>& handlers() {
  static const std::unordered_map<std::string_view, Handler> table = [] {
    std::unordered_map<std::string_view, Handler> t;
    auto flags_at = [](const SyscallEvent& e, std::size_t i) -> std::string {
      const Arg* a = arg_at(e, i);
      return a ? a->text : std::string();
    };
    t["open"] = [=](Ctx& c) { do_open(c, 0, std::nullopt, flags_at(c.e, 1)); };
    t["openat"] = [=](Ctx& c) { do_open(c, 1, 0, flags_at(c.e, 2)); };
    t["creat"] = [](Ctx& c) { do_open(c, 0, std::nullopt, "O_CREAT|O_WRONLY|O_TRUNC"); };
    t["openat2"] = [](Ctx& c) {
      const Arg* how = arg_at(c.e, 2);
      std::string flags = how ? struct_field(how->text, "flags").value_or("") : "";
      do_open(c, 1, 0, flags);
    };
    for (auto name : {"stat", "lstat", "stat64", "lstat64", "access", "readlink", "statfs",
                      "statfs64", "getxattr", "lgetxattr", "listxattr", "llistxattr", "uselib"}) {
      t[name] = [](Ctx& c) { do_exist(c, 0, std::nullopt); };
    }
    for (auto name : {"newfstatat", "fstatat64", "statx", "faccessat", "faccessat2", "readlinkat"}) {
      t[name] = [](Ctx& c) { do_exist(c, 1, 0); };
    }
    t["chdir"] = do_chdir;
    t["fchdir"] = do_fchdir;
    t["execve"] = [](Ctx& c) { do_exec(c, 0, std::nullopt); };
    t["execveat"] = [](Ctx& c) { do_exec(c, 1, 0); };
    for (auto name : {"unlink", "rmdir"}) t[name] = [](Ctx& c) { do_remove(c, 0, std::nullopt); };
    t["unlinkat"] = [](Ctx& c) { do_remove(c, 1, 0); };
    t["rename"] = [](Ctx& c) { do_rename(c, 0, std::nullopt, 1, std::nullopt); };
    t["renameat"] = [](Ctx& c) { do_rename(c, 1, 0, 3, 2); };
    t["renameat2"] = [](Ctx& c) { do_rename(c, 1, 0, 3, 2); };
    t["link"] = [](Ctx& c) { do_link(c, 0, std::nullopt, 1, std::nullopt); };
    t["linkat"] = [](Ctx& c) { do_link(c, 1, 0, 3, 2); };
    t["symlink"] = [](Ctx& c) { do_create(c, 1, std::nullopt); };
    t["symlinkat"] = [](Ctx& c) { do_create(c, 2, 1); };
    t["mkdir"] = [](Ctx& c) { do_create(c, 0, std::nullopt); };
    t["mkdirat"] = [](Ctx& c) { do_create(c, 1, 0); };
    t["mknod"] = [](Ctx& c) { do_mknod(c, 0, std::nullopt, 1); };
    t["mknodat"] = [](Ctx& c) { do_mknod(c, 1, 0, 2); };
    for (auto name : {"chmod", "chown", "lchown", "chown32", "lchown32", "utime", "utimes",
                      "setxattr", "lsetxattr", "removexattr", "lremovexattr"}) {
      t[name] = [](Ctx& c) { do_modify(c, 0, std::nullopt); };
    }
    for (auto name : {"fchmodat", "fchmodat2", "fchownat", "utimensat", "futimesat"}) {
      t[name] = [](Ctx& c) { do_modify(c, 1, 0); };
    }
    for (auto name : {"truncate", "truncate64"}) {
      t[name] = [](Ctx& c) {
        if (auto p = c.path_arg(0, std::nullopt)) {
          c.read(c.path_resource(*p));
          c.write(c.path_resource(*p));
        }
      };
    }
    t["socket"] = do_socket;
    t["bind"] = do_bind;
    t["connect"] = [](Ctx& c) { do_peer(c, 1); };
    t["sendto"] = [](Ctx& c) { do_peer(c, 4); };
    t["recvfrom"] = [](Ctx& c) { do_peer(c, 4); };
    t["sendmsg"] = do_msg;
    t["recvmsg"] = do_msg;
    t["accept"] = do_accept;
    t["accept4"] = do_accept;
    t["pipe"] = [](Ctx& c) { do_pipe(c, 0, std::nullopt); };
    t["pipe2"] = [](Ctx& c) { do_pipe(c, 0, 1); };
    t["socketpair"] = [](Ctx& c) { do_pipe(c, 3, std::nullopt); };
    t["dup"] = [](Ctx& c) { do_dup(c, false); };
    t["dup2"] = [](Ctx& c) { do_dup(c, false); };
    t["dup3"] = [](Ctx& c) {
      const Arg* f = arg_at(c.e, 2);
      do_dup(c, f && has_flag(f->text, "O_CLOEXEC", kOCloexec));
    };
    t["fcntl"] = do_fcntl;
    t["fcntl64"] = do_fcntl;
    t["close"] = do_close;
    t["close_range"] = do_close_range;
    t["clone"] = [](Ctx& c) {
      std::string flags;
      for (const auto& a : c.e.args) {
        if (a.text.rfind("flags=", 0) == 0) flags = a.text.substr(6);
      }
      do_clone(c, flags);
    };
    t["clone3"] = [](Ctx& c) {
      const Arg* a = arg_at(c.e, 0);
      do_clone(c, a ? struct_field(a->text, "flags").value_or("") : "");
    };
    t["fork"] = [](Ctx& c) { do_clone(c, ""); };
    t["vfork"] = [](Ctx& c) { do_clone(c, ""); };
    for (auto name : {"eventfd", "eventfd2", "epoll_create", "epoll_create1", "signalfd",
                      "signalfd4", "timerfd_create", "memfd_create", "inotify_init",
                      "inotify_init1", "userfaultfd", "pidfd_open", "perf_event_open"}) {
      t[name] = do_anon_fd;
    }
    return t;
  }();
  return table;
}

const std::unordered_set<std::string_view>& fd_only_calls() {
  static const std::unordered_set<std::string_view> s = {
      "read", "write", "pread64", "pwrite64", "readv", "writev", "preadv", "pwritev", "preadv2",
      "pwritev2", "lseek", "_llseek", "mmap", "mmap2", "fstat", "fstat64", "fstatfs", "fstatfs64",
      "fsync", "fdatasync", "getdents", "getdents64", "ioctl", "flock", "ftruncate",
      "ftruncate64", "fchmod", "fchown", "fchown32", "fadvise64", "fadvise64_64", "sendfile",
      "sendfile64", "splice", "tee", "vmsplice", "poll", "ppoll", "select", "_newselect",
      "pselect6", "epoll_ctl", "epoll_wait", "epoll_pwait", "epoll_pwait2", "listen", "shutdown",
      "getsockname", "getpeername", "setsockopt", "getsockopt", "send", "recv", "sendmmsg",
      "recvmmsg", "fgetxattr", "fsetxattr", "flistxattr", "fremovexattr", "copy_file_range",
      "fallocate", "sync_file_range", "readahead", "futimens", "syncfs", "inotify_add_watch",
      "inotify_rm_watch", "timerfd_settime", "timerfd_gettime"};
  return s;
}

const std::unordered_set<std::string_view>& neutral_calls() {
  static const std::unordered_set<std::string_view> s = {
      "brk", "mprotect", "munmap", "mremap", "madvise", "mlock", "munlock", "msync", "arch_prctl",
      "set_tid_address", "set_robust_list", "get_robust_list", "rseq", "prlimit64", "getrlimit",
      "setrlimit", "ugetrlimit", "getrandom", "rt_sigaction", "rt_sigprocmask", "rt_sigreturn",
      "rt_sigsuspend", "rt_sigtimedwait", "sigaltstack", "sigreturn", "getpid", "getppid", "gettid",
      "getuid", "geteuid", "getgid", "getegid", "getuid32", "geteuid32", "getgid32", "getegid32",
      "getgroups", "setgroups", "setuid", "setgid", "setreuid", "setregid", "setresuid",
      "setresgid", "getresuid", "getresgid", "setfsuid", "setfsgid", "uname", "sysinfo",
      "clock_gettime", "clock_getres", "gettimeofday", "time", "nanosleep", "clock_nanosleep",
      "futex", "futex_waitv", "wait4", "waitid", "waitpid", "kill", "tgkill", "tkill",
      "sched_yield", "sched_getaffinity", "sched_setaffinity", "sched_getparam",
      "sched_setscheduler", "sched_getscheduler", "getcwd", "umask", "setpgid", "getpgid",
      "getpgrp", "setsid", "getsid", "prctl", "capget", "capset", "getrusage", "times", "alarm",
      "pause", "exit", "exit_group", "restart_syscall", "membarrier", "getpriority",
      "setpriority", "ioprio_get", "ioprio_set", "sync", "setitimer", "getitimer", "personality",
      "pidfd_send_signal", "timer_create", "timer_settime", "timer_delete", "mincore",
      "sched_get_priority_max", "sched_get_priority_min", "clone_end", "seccomp", "unshare"};
  return s;
}

}  // namespace

std::string_view to_string(ResourceKind kind) {
  switch (kind) {
    case ResourceKind::File: return "file";
    case ResourceKind::Fifo: return "fifo";
    case ResourceKind::LocalSocket: return "local-socket";
    case ResourceKind::NetSocket: return "net-socket";
  }
  return "file";
}

std::optional<ResourceKind> resource_kind_from_string(std::string_view s) {
  for (auto k : {ResourceKind::File, ResourceKind::Fifo, ResourceKind::LocalSocket,
                 ResourceKind::NetSocket}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

std::string NetAddress::str() const {
  std::string h = host.find(':') != std::string::npos ? "[" + host + "]" : host;
  return protocol + "://" + h + ":" + std::to_string(port);
}

std::string Resource::str() const {
  if (kind == ResourceKind::NetSocket) return net.str();
  return std::string(to_string(kind)) + ":" + path;
}

void EffectDelta::merge(const EffectDelta& other) {
  reads.insert(other.reads.begin(), other.reads.end());
  writes.insert(other.writes.begin(), other.writes.end());
  deleted.insert(other.deleted.begin(), other.deleted.end());
}

void Diagnostics::warn(std::string msg) {
  if (warnings.size() < kMaxWarnings) warnings.push_back(std::move(msg));
}

void Diagnostics::merge(const Diagnostics& other) {
  unknown_tids += other.unknown_tids;
  unresolvable_dirfd += other.unresolvable_dirfd;
  for (const auto& [k, v] : other.unhandled) unhandled[k] += v;
  for (const auto& w : other.warnings) warn(w);
}

const std::string& SystemState::cwd(std::int64_t tid) const { return cwds.at(procs.at(tid).fs_id); }
std::string& SystemState::cwd_mut(std::int64_t tid) { return cwds.at(procs.at(tid).fs_id); }
const FdTable& SystemState::fds(std::int64_t tid) const { return fd_tables.at(procs.at(tid).fdt_id); }
FdTable& SystemState::fds(std::int64_t tid) { return fd_tables.at(procs.at(tid).fdt_id); }

ProcState& SystemState::spawn_root(std::int64_t tid) {
  ProcState p;
  p.tgid = tid;
  p.parent = 0;
  p.exe = root_exe;
  p.fs_id = allocate_id();
  p.fdt_id = allocate_id();
  cwds[p.fs_id] = root_cwd;
  fd_tables[p.fdt_id] = root_fds;
  return procs[tid] = p;
}

SystemState init_state(std::string root_cwd, std::string root_exe,
                       const std::map<int, Resource>& inherited_fds,
                       std::optional<std::int64_t> root_tid) {
  if (!path::is_absolute(root_cwd)) {
    throw Error(ErrorKind::Precondition, "initial cwd must be absolute: '" + root_cwd + "'");
  }
  SystemState st;
  st.root_cwd = path::normalize(root_cwd);
  st.root_exe = root_exe.empty() ? root_exe : path::normalize(root_exe);
  for (int fd : {0, 1, 2}) st.root_fds[fd] = FdEntry::anonymous();
  for (const auto& [fd, res] : inherited_fds) {
    FdEntry e;
    e.resource = res;
    if (res.is_path()) e.path = res.path;
    st.root_fds[fd] = e;
  }
  if (root_tid) st.spawn_root(*root_tid);
  return st;
}

std::optional<std::string> resolve_path(const SystemState& state, std::int64_t tid, const RawPath& raw) {
  if (path::is_absolute(raw.path)) return path::normalize(raw.path);
  std::string base;
  if (!raw.dirfd || raw.dirfd->text == "AT_FDCWD") {
    if (raw.dirfd && raw.dirfd->annotation && path::is_absolute(*raw.dirfd->annotation)) {
      base = *raw.dirfd->annotation;
    } else {
      base = state.knows(tid) ? state.cwd(tid) : state.root_cwd;
    }
  } else if (raw.dirfd->annotation && path::is_absolute(*raw.dirfd->annotation)) {
    base = *raw.dirfd->annotation;
  } else {
    auto fd = fd_of(*raw.dirfd);
    if (!fd || !state.knows(tid)) return std::nullopt;
    const auto& t = state.fds(tid);
    auto it = t.find(*fd);
    if (it == t.end() || !it->second.path || !path::is_absolute(*it->second.path)) return std::nullopt;
    base = *it->second.path;
  }
  return path::join(base, raw.path);
}

bool is_fd_only(std::string_view name) { return fd_only_calls().count(name) != 0; }

std::optional<SockAddr> parse_sockaddr(std::string_view text) {
  auto fam = struct_field(text, "sa_family");
  if (!fam) return std::nullopt;
  SockAddr sa;
  sa.family = *fam;
  if (sa.family == "AF_UNIX" || sa.family == "AF_LOCAL") {
    sa.family = "AF_UNIX";
    auto sp = text.find("sun_path=");
    if (sp == std::string_view::npos) return sa;
    sp += 9;
    if (sp < text.size() && text[sp] == '@') sa.abstract = true;
    if (auto q = quoted_after(text, sp)) sa.path = *q;
    if (!sa.abstract && !sa.path.empty() && sa.path.front() == '\0') sa.abstract = true;
    return sa;
  }
  auto port_text = struct_field(text, sa.family == "AF_INET6" ? "sin6_port" : "sin_port");
  if (port_text) {
    auto open = port_text->find('(');
    auto num = open == std::string::npos ? *port_text
                                         : port_text->substr(open + 1, port_text->find(')') - open - 1);
    if (auto v = to_int(num)) sa.port = static_cast<std::uint16_t>(*v);
  }
  if (sa.family == "AF_INET") {
    auto pos = text.find("inet_addr(");
    if (pos != std::string_view::npos) {
      if (auto q = quoted_after(text, pos)) sa.host = *q;
    }
  } else if (sa.family == "AF_INET6") {
    auto pos = text.find("inet_pton(");
    if (pos != std::string_view::npos) {
      if (auto q = quoted_after(text, pos)) sa.host = *q;
    }
  }
  return sa;
}

EffectDelta apply_event(SystemState& state, const SyscallEvent& e, Diagnostics* diag) {
  // Unsuccessful calls are ignored as if they never happened, except a
  // non-blocking connect that is still in progress.
  bool in_progress = e.name == "connect" && e.err && *e.err == "EINPROGRESS";
  if (e.failed() && !in_progress) return {};

  if (!state.knows(e.tid)) {
    bool first = state.procs.empty();
    state.spawn_root(e.tid);
    if (!first && diag) {
      ++diag->unknown_tids;
      diag->warn("event for unknown tid " + std::to_string(e.tid) + " (" + e.name +
                 "); synthesized from the root template");
    }
  }
  Ctx ctx{state, e, diag, {}};
  const auto& table = handlers();
  if (auto it = table.find(e.name); it != table.end()) {
    it->second(ctx);
  } else if (!fd_only_calls().count(e.name) && !neutral_calls().count(e.name)) {
    if (diag) ++diag->unhandled[e.name];
  }
  return std::move(ctx.delta);
}

EffectDelta rsrc_log(const trace::Log& log, const SystemState& g0, Diagnostics* diag) {
  SystemState st = g0;
  EffectDelta total;
  for (const auto& e : log) total.merge(apply_event(st, e, diag));
  total.deleted = st.tombstones;
  return total;
}

EffectDelta rsrc_execution_log(const trace::ExecutionLog& el, const SystemState& g0, Diagnostics* diag) {
  EffectDelta total;
  for (const auto& log : el.logs) total.merge(rsrc_log(log, g0, diag));
  return total;
}

}  // namespace slimpart::rsrc
