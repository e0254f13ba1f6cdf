#include "slimpart/emit.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <sys/sysmacros.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "json_io.hpp"
#include "slimpart/document.hpp"
#include "slimpart/error.hpp"
#include "slimpart/path.hpp"

namespace slimpart::emit {

namespace fs = std::filesystem;
using document::detail::bytes;
using document::detail::json;
using document::detail::meta_from;
using document::detail::string_list;
using document::detail::strings_from;
using document::detail::text;
using placement::FileMeta;
using placement::FileType;

namespace {

std::string errno_text(const std::string& what, const std::string& p) {
  return what + " " + p + ": " + std::strerror(errno);
}

// Removes a tree even when directories in it lack owner write permission.
void remove_tree(const fs::path& p) {
  std::error_code ec;
  if (!fs::exists(fs::symlink_status(p, ec))) return;
  for (auto it = fs::recursive_directory_iterator(p, fs::directory_options::none, ec);
       !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (it->is_directory(ec) && !it->is_symlink(ec)) ::chmod(it->path().c_str(), 0700);
  }
  ::chmod(p.c_str(), 0700);
  fs::remove_all(p, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot remove " + p.string() + ": " + ec.message());
}

void copy_contents(const std::string& from, const std::string& to) {
  int in = ::open(from.c_str(), O_RDONLY | O_CLOEXEC);
  if (in < 0) throw Error(ErrorKind::Io, errno_text("cannot read", from));
  int out = ::open(to.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0600);
  if (out < 0) {
    ::close(in);
    throw Error(ErrorKind::Io, errno_text("cannot create", to));
  }
  char buf[1 << 16];
  for (;;) {
    auto n = ::read(in, buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) {
      ::close(in);
      ::close(out);
      throw Error(ErrorKind::Io, errno_text("read failed on", from));
    }
    if (n == 0) break;
    for (ssize_t off = 0; off < n;) {
      auto w = ::write(out, buf + off, static_cast<std::size_t>(n - off));
      if (w < 0 && errno == EINTR) continue;
      if (w < 0) {
        ::close(in);
        ::close(out);
        throw Error(ErrorKind::Io, errno_text("write failed on", to));
      }
      off += w;
    }
  }
  ::close(in);
  if (::close(out) != 0) throw Error(ErrorKind::Io, errno_text("close failed on", to));
}

struct Writer {
  std::string source_root;
  std::vector<std::string> warnings;

  std::string src(const std::string& p) const { return p == "/" ? source_root : source_root + p; }

  // Creates the node at `dest`. Returns false when the node type cannot be
  // reproduced here (e.g. device files without privilege).
  bool create(const std::string& dest, const std::string& from, const FileMeta& m) {
    switch (m.type) {
      case FileType::Directory:
        if (::mkdir(dest.c_str(), 0700) != 0 && errno != EEXIST) {
          throw Error(ErrorKind::Io, errno_text("mkdir", dest));
        }
        return true;
      case FileType::Regular:
        copy_contents(from, dest);
        return true;
      case FileType::Symlink:
        if (::symlink(m.link_target.value_or("").c_str(), dest.c_str()) != 0) {
          throw Error(ErrorKind::Io, errno_text("symlink", dest));
        }
        return true;
      case FileType::Fifo:
        if (::mkfifo(dest.c_str(), 0600) != 0) throw Error(ErrorKind::Io, errno_text("mkfifo", dest));
        return true;
      case FileType::CharDevice:
      case FileType::BlockDevice: {
        struct stat st {};
        if (::lstat(from.c_str(), &st) != 0 || ::mknod(dest.c_str(), st.st_mode, st.st_rdev) != 0) {
          warnings.push_back(errno_text("cannot create device node", dest));
          return false;
        }
        return true;
      }
      case FileType::Socket:
        warnings.push_back("socket " + dest + " is created at runtime; not copied");
        return false;
    }
    return false;
  }

  // Ownership first (it clears set-id bits), then mode, then times.
  void apply_meta(const std::string& dest, const std::string& shown, const FileMeta& m,
                  std::vector<std::string>& manifest_warnings) {
    if (::lchown(dest.c_str(), m.uid, m.gid) != 0) {
      manifest_warnings.push_back("ownership " + std::to_string(m.uid) + ":" + std::to_string(m.gid) + " not set on " +
                                  shown + ": " + std::strerror(errno));
    }
    if (m.type != FileType::Symlink && ::chmod(dest.c_str(), m.mode) != 0) {
      throw Error(ErrorKind::Io, errno_text("chmod", dest));
    }
    timespec ts[2];
    ts[0].tv_sec = ts[1].tv_sec = m.mtime_sec;
    ts[0].tv_nsec = ts[1].tv_nsec = m.mtime_nsec;
    if (::utimensat(AT_FDCWD, dest.c_str(), ts, AT_SYMLINK_NOFOLLOW) != 0) {
      manifest_warnings.push_back(errno_text("mtime not set on", shown));
    }
  }
};

struct Node {
  std::string path;  // container path
  std::string from;  // host source, empty for synthesized entries
  FileMeta meta;
  std::string origin;
};

// Builds `root` from nodes; returns the entries that were actually created.
std::vector<ManifestEntry> build_tree(Writer& w, const std::string& root, std::vector<Node> nodes,
                                      std::vector<std::string>& manifest_warnings) {
  std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) { return a.path < b.path; });
  std::vector<ManifestEntry> created;
  std::vector<const Node*> done;
  for (const auto& n : nodes) {
    std::string dest = root + n.path;
    if (w.create(dest, n.from, n.meta)) {
      done.push_back(&n);
      created.push_back({n.path, n.meta, n.origin});
    }
  }
  // Children before parents so read-only directories are finalized last.
  for (auto it = done.rbegin(); it != done.rend(); ++it) {
    w.apply_meta(root + (*it)->path, (*it)->path, (*it)->meta, manifest_warnings);
  }
  return created;
}

FileMeta dir_meta(std::uint32_t mode = 0755) { return FileMeta{FileType::Directory, mode, 0, 0, 0, 0, 0, std::nullopt}; }

FileMeta host_file_meta(const std::string& host, std::uint32_t mode) {
  struct stat st {};
  if (::stat(host.c_str(), &st) != 0) throw Error(ErrorKind::Io, errno_text("cannot stat", host));
  return FileMeta{FileType::Regular, mode, 0, 0, st.st_mtim.tv_sec, st.st_mtim.tv_nsec,
                  static_cast<std::uint64_t>(st.st_size), std::nullopt};
}

void ensure_empty_out(const std::string& out_dir, bool force) {
  std::error_code ec;
  if (fs::exists(out_dir, ec)) {
    if (!fs::is_directory(out_dir, ec)) throw Error(ErrorKind::Precondition, out_dir + " is not a directory");
    if (!fs::is_empty(out_dir, ec)) {
      if (!force) throw Error(ErrorKind::Precondition, "output directory not empty: " + out_dir + " (use --force)");
      for (const char* sub : {"containers", "shared", "docker-compose.json", "size-report.txt"}) {
        remove_tree(fs::path(out_dir) / sub);
      }
    }
  }
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out_dir + ": " + ec.message());
}

std::string dockerfile(const ContainerManifest& m) {
  std::ostringstream s;
  s << "FROM scratch\nCOPY rootfs/ /\n";
  auto quoted = [](const std::vector<std::string>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(document::escape_bytes(x));
    return a.dump();
  };
  if (!m.entry_argv.empty() && !m.server_socket.empty()) {
    std::vector<std::string> cmd{kServerPath, "--listen", m.server_socket, "--"};
    cmd.insert(cmd.end(), m.entry_argv.begin(), m.entry_argv.end());
    s << "CMD " << quoted(cmd) << "\n";
  } else if (!m.entry_argv.empty()) {
    s << "CMD " << quoted(m.entry_argv) << "\n";
  } else if (!m.server_socket.empty()) {
    s << "CMD " << quoted({kServerPath, "--listen", m.server_socket}) << "\n";
  }
  return s.str();
}

json entry_to_json(const ManifestEntry& e) {
  json j = document::detail::to_json(e.meta);
  j["path"] = bytes(e.path);
  j["origin"] = e.origin;
  return j;
}

}  // namespace

EmitResult materialize(const placement::PlacementPlan& plan, const std::string& source_root,
                       const std::string& out_dir, const EmitOptions& opts) {
  std::string root = source_root;
  while (root.size() > 1 && root.back() == '/') root.pop_back();
  Writer w{root, {}};

  // Check everything up front so a failed build leaves nothing half-written.
  std::vector<std::string> missing;
  auto check = [&](const placement::PlacedFile& f) {
    struct stat st {};
    if (::lstat(w.src(f.path).c_str(), &st) != 0) missing.push_back(f.path);
  };
  bool need_rpe = false;
  for (const auto& c : plan.containers) {
    for (const auto& f : c.files) {
      if (f.role != placement::Role::MountPoint) check(f);
    }
    need_rpe = need_rpe || !c.stubs.empty() || c.rpe_server;
    if (!c.stubs.empty() && opts.stub_binary.empty()) {
      throw Error(ErrorKind::Precondition, "plan has RPE stubs but no stub binary was given");
    }
    if (c.rpe_server && opts.server_binary.empty()) {
      throw Error(ErrorKind::Precondition, "plan has RPE servers but no server binary was given");
    }
  }
  for (const auto& v : plan.volumes) {
    for (const auto& f : v.files) check(f);
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    throw MissingSourceFile(std::move(missing));
  }

  ensure_empty_out(out_dir, opts.force);
  const fs::path out(out_dir);
  EmitResult result;

  // Shared volumes are built once; each container only records the mount.
  fs::create_directories(out / "shared");
  json shared_doc{{"document", "slimpart-shared"}, {"version", kManifestVersion}, {"volumes", json::array()}};
  for (const auto& v : plan.volumes) {
    std::string vroot = (out / "shared" / v.key).string();
    std::vector<Node> nodes;
    for (const auto& f : v.files) {
      nodes.push_back({f.path.substr(v.mount.size()), w.src(f.path), f.meta, std::string(placement::to_string(f.role))});
    }
    if (::mkdir(vroot.c_str(), 0700) != 0) throw Error(ErrorKind::Io, errno_text("mkdir", vroot));
    std::vector<std::string> vw;
    auto created = build_tree(w, vroot, std::move(nodes), vw);
    FileMeta rm = v.root_meta.value_or(dir_meta());
    w.apply_meta(vroot, v.mount, rm, vw);
    json files = json::array();
    for (auto e : created) {
      e.path = v.mount + e.path;
      files.push_back(entry_to_json(e));
    }
    shared_doc["volumes"].push_back({{"key", v.key},
                                     {"mount", bytes(v.mount)},
                                     {"containers", v.containers},
                                     {"root", document::detail::to_json(rm)},
                                     {"files", files},
                                     {"warnings", string_list(vw)}});
    result.warnings.insert(result.warnings.end(), vw.begin(), vw.end());
  }
  if (need_rpe) fs::create_directories(out / "shared" / "rpe");
  document::write_file((out / "shared" / "manifest.json").string(), shared_doc.dump(1) + "\n");

  for (const auto& c : plan.containers) {
    ContainerManifest m;
    m.name = c.name;
    m.exes = c.exes;
    m.stubs = c.stubs;
    m.shared_net = c.shared_net;
    if (c.index == plan.entry_container) m.entry_argv = plan.entry_argv;
    if (c.rpe_server) m.server_socket = std::string(placement::kRpeDir) + "/" + c.name + ".sock";
    for (const auto& v : c.volumes) m.volumes.push_back({v.key, v.mount, "shared/" + v.key});

    std::vector<Node> nodes;
    std::set<std::string> taken;
    for (const auto& f : c.files) {
      nodes.push_back({f.path, w.src(f.path), f.meta, std::string(placement::to_string(f.role))});
      taken.insert(f.path);
    }
    auto add_dir = [&](const std::string& p, std::uint32_t mode) {
      if (taken.insert(p).second) nodes.push_back({p, {}, dir_meta(mode), "support"});
    };
    const bool rpe = !c.stubs.empty() || c.rpe_server;
    if (rpe) {
      add_dir(kSupportDir, 0755);
      add_dir(placement::kRpeDir, 0777);
      m.volumes.push_back({"rpe", placement::kRpeDir, "shared/rpe"});
    }
    if (!c.stubs.empty()) {
      std::string table;
      for (const auto& s : c.stubs) {
        if (taken.count(s.path)) {
          throw Error(ErrorKind::Invariant, "stub collides with a placed file: " + s.path + " in " + c.name);
        }
        for (const auto& a : path::ancestors(s.path)) add_dir(a, 0755);
        auto meta = host_file_meta(opts.stub_binary, 0755);
        nodes.push_back({s.path, opts.stub_binary, meta, "stub"});
        taken.insert(s.path);
        table += s.path + "\t" + s.socket + "\n";
      }
      std::string table_host = (out / "containers" / c.name / "stubs.tmp").string();
      fs::create_directories(out / "containers" / c.name);
      document::write_file(table_host, table);
      auto meta = host_file_meta(table_host, 0644);
      meta.mtime_sec = 0;
      meta.mtime_nsec = 0;
      nodes.push_back({kStubTable, table_host, meta, "support"});
    }
    if (c.rpe_server) {
      add_dir(std::string(kSupportDir) + "/bin", 0755);
      nodes.push_back({kServerPath, opts.server_binary, host_file_meta(opts.server_binary, 0755), "support"});
    }

    fs::path cdir = out / "containers" / c.name;
    fs::create_directories(cdir / "rootfs");
    m.files = build_tree(w, (cdir / "rootfs").string(), std::move(nodes), m.warnings);
    std::error_code ec;
    fs::remove(cdir / "stubs.tmp", ec);
    document::write_file((cdir / "manifest.json").string(), dump_manifest(m));
    document::write_file((cdir / "Dockerfile").string(), dockerfile(m));
    result.warnings.insert(result.warnings.end(), m.warnings.begin(), m.warnings.end());
    result.manifests.push_back(std::move(m));
  }
  result.warnings.insert(result.warnings.begin(), w.warnings.begin(), w.warnings.end());
  document::write_file((out / "docker-compose.json").string(), emit_compose(result.manifests));
  return result;
}

std::string dump_manifest(const ContainerManifest& m) {
  json files = json::array();
  for (const auto& e : m.files) files.push_back(entry_to_json(e));
  json vols = json::array();
  for (const auto& v : m.volumes) vols.push_back({{"key", v.key}, {"mount", bytes(v.mount)}, {"host", bytes(v.host)}});
  json stubs = json::array();
  for (const auto& s : m.stubs) {
    stubs.push_back({{"path", bytes(s.path)}, {"target", s.target}, {"target_name", s.target_name},
                     {"socket", bytes(s.socket)}});
  }
  json j{{"document", "slimpart-manifest"},
         {"version", m.version},
         {"name", m.name},
         {"exes", string_list(m.exes)},
         {"entry_argv", string_list(m.entry_argv)},
         {"server_socket", bytes(m.server_socket)},
         {"shared_net", m.shared_net},
         {"volumes", vols},
         {"stubs", stubs},
         {"files", files},
         {"warnings", string_list(m.warnings)}};
  return j.dump(1) + "\n";
}

ContainerManifest parse_manifest(std::string_view textv) {
  ContainerManifest m;
  try {
    json j = json::parse(textv);
    if (j.value("document", "") != "slimpart-manifest") throw Error(ErrorKind::Io, "not a manifest document");
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion) throw Error(ErrorKind::Io, "unsupported manifest version");
    m.name = j.at("name").get<std::string>();
    m.exes = strings_from(j.at("exes"));
    m.entry_argv = strings_from(j.at("entry_argv"));
    m.server_socket = text(j.at("server_socket"));
    m.shared_net = j.at("shared_net").get<bool>();
    for (const auto& v : j.at("volumes")) {
      m.volumes.push_back({v.at("key").get<std::string>(), text(v.at("mount")), text(v.at("host"))});
    }
    for (const auto& s : j.at("stubs")) {
      m.stubs.push_back({text(s.at("path")), s.at("target").get<int>(), s.at("target_name").get<std::string>(),
                         text(s.at("socket"))});
    }
    for (const auto& f : j.at("files")) m.files.push_back({text(f.at("path")), meta_from(f), f.at("origin").get<std::string>()});
    m.warnings = strings_from(j.at("warnings"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

std::string emit_compose(const std::vector<ContainerManifest>& manifests) {
  json services = json::object();
  std::string first_net;
  for (const auto& m : manifests) {
    if (m.shared_net) {
      first_net = m.name;
      break;
    }
  }
  for (const auto& m : manifests) {
    json s{{"build", "containers/" + m.name}, {"image", "slimpart/" + m.name}};
    json vols = json::array();
    for (const auto& v : m.volumes) vols.push_back("./" + v.host + ":" + document::escape_bytes(v.mount));
    if (!vols.empty()) s["volumes"] = vols;
    if (m.shared_net && m.name != first_net) s["network_mode"] = "service:" + first_net;
    if (!m.server_socket.empty()) s["x-slimpart-rpe-socket"] = m.server_socket;
    if (!m.stubs.empty()) {
      std::set<std::string> deps;
      for (const auto& st : m.stubs) deps.insert(st.target_name);
      if (m.shared_net && m.name != first_net) deps.insert(first_net);
      s["depends_on"] = json(std::vector<std::string>(deps.begin(), deps.end()));
    } else if (m.shared_net && m.name != first_net) {
      s["depends_on"] = json::array({first_net});
    }
    services[m.name] = std::move(s);
  }
  json doc{{"x-slimpart-version", kManifestVersion}, {"services", services}};
  return doc.dump(2) + "\n";
}

std::vector<ManifestEntry> walk_tree(const std::string& root) {
  std::vector<ManifestEntry> out;
  std::error_code ec;
  std::string base = root;
  while (base.size() > 1 && base.back() == '/') base.pop_back();
  placement::DirectorySource src(base);
  for (auto it = fs::recursive_directory_iterator(base, fs::directory_options::none, ec);
       !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
    std::string host = it->path().string();
    std::string p = host.substr(base.size());
    if (auto m = src.lookup(p)) out.push_back({p, *m, {}});
  }
  if (ec) throw Error(ErrorKind::Io, "cannot walk " + root + ": " + ec.message());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

std::uint64_t tree_bytes(const std::string& root) {
  std::uint64_t total = 0;
  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::none, ec);
       !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
    struct stat st {};
    if (::lstat(it->path().c_str(), &st) == 0 && S_ISREG(st.st_mode)) total += static_cast<std::uint64_t>(st.st_size);
  }
  return total;
}

SizeReport size_report(const std::string& source_root, const std::string& out_dir,
                       const std::vector<ContainerManifest>& manifests) {
  SizeReport r;
  r.source_bytes = tree_bytes(source_root);
  const fs::path out(out_dir);
  for (const auto& m : manifests) {
    r.containers.push_back({m.name, tree_bytes((out / "containers" / m.name / "rootfs").string())});
    r.total_bytes += r.containers.back().bytes;
  }
  // Volume contents only; the shared manifest is bookkeeping.
  std::error_code ec;
  for (const auto& d : fs::directory_iterator(out / "shared", ec)) {
    if (d.is_directory(ec)) r.shared_bytes += tree_bytes(d.path().string());
  }
  r.total_bytes += r.shared_bytes;
  r.reduction = r.source_bytes == 0 ? 0.0 : 1.0 - static_cast<double>(r.total_bytes) / static_cast<double>(r.source_bytes);
  return r;
}

std::string format_size_report(const SizeReport& r) {
  auto mb = [](std::uint64_t b) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(1);
    s << static_cast<double>(b) / 1e6 << " MB";
    return s.str();
  };
  auto pct = [&](std::uint64_t b) {
    if (r.source_bytes == 0) return std::string("n/a");
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(1);
    s << 100.0 * (1.0 - static_cast<double>(b) / static_cast<double>(r.source_bytes)) << "%";
    return s.str();
  };
  auto secs = [](const std::optional<double>& t) {
    if (!t) return std::string("-");
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(2);
    s << *t << " s";
    return s.str();
  };
  std::vector<std::vector<std::string>> rows{{"Container", "Size", "Analysis time", "Result size", "Size reduction"}};
  for (const auto& c : r.containers) {
    rows.push_back({c.name, mb(r.source_bytes), secs(r.analysis_seconds), mb(c.bytes), pct(c.bytes)});
  }
  if (r.shared_bytes > 0) rows.push_back({"(shared volumes)", "", "", mb(r.shared_bytes), ""});
  rows.push_back({"total", mb(r.source_bytes), secs(r.analysis_seconds), mb(r.total_bytes), pct(r.total_bytes)});
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream s;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      s << row[i];
      if (i + 1 < row.size()) s << std::string(width[i] - row[i].size() + 2, ' ');
    }
    s << "\n";
  }
  if (r.build_seconds) s << "build time: " << secs(r.build_seconds) << "\n";
  return s.str();
}

}  // namespace slimpart::emit
