#include "fixtures.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "slimpart/path.hpp"

#ifndef SLIMPART_FIXTURE_DIR
#error "SLIMPART_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace fs = std::filesystem;
using slimpart::placement::FileMeta;
using slimpart::placement::FileType;

namespace fixtures {

TempDir::TempDir(const std::string& tag) {
  std::string tmpl = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
  if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string fixture(const std::string& rel) { return std::string(SLIMPART_FIXTURE_DIR) + "/" + rel; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const std::string& path, const std::string& content) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + path);
}

namespace {

void set_mtime(const std::string& host, std::int64_t sec) {
  timespec ts[2] = {{sec, 0}, {sec, 0}};
  ::utimensat(AT_FDCWD, host.c_str(), ts, AT_SYMLINK_NOFOLLOW);
}

// Content is a function of the path so rebuilt trees compare equal.
void write_content(const std::string& host, std::uint64_t size, const std::string& prefix, bool sparse) {
  int fd = ::open(host.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0600);
  if (fd < 0) throw std::runtime_error("cannot create " + host);
  std::string head = prefix.substr(0, std::min<std::size_t>(prefix.size(), size));
  if (!head.empty() && ::write(fd, head.data(), head.size()) != static_cast<ssize_t>(head.size())) {
    throw std::runtime_error("write failed: " + host);
  }
  if (sparse) {
    if (::ftruncate(fd, static_cast<off_t>(size)) != 0) throw std::runtime_error("ftruncate failed: " + host);
  } else {
    std::mt19937_64 rng(std::hash<std::string>{}(host.substr(host.rfind('/'))));
    std::string chunk(1 << 20, '\0');
    for (std::uint64_t done = head.size(); done < size;) {
      for (std::size_t i = 0; i + 8 <= chunk.size(); i += 8) {
        std::uint64_t v = rng();
        std::memcpy(chunk.data() + i, &v, 8);
      }
      std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(chunk.size(), size - done));
      if (::write(fd, chunk.data(), n) != static_cast<ssize_t>(n)) throw std::runtime_error("write failed: " + host);
      done += n;
    }
  }
  ::close(fd);
}

std::vector<std::uint64_t> split(std::uint64_t total, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> w(0.2, 1.8);
  std::vector<double> ws(n);
  double sum = 0;
  for (auto& x : ws) sum += (x = w(rng));
  std::vector<std::uint64_t> out(n);
  std::uint64_t used = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) used += out[i] = static_cast<std::uint64_t>(total * ws[i] / sum);
  out[n - 1] = total - used;
  return out;
}

std::string two(int i) {
  char b[8];
  std::snprintf(b, sizeof b, "%02d", i);
  return b;
}

}  // namespace

void build_tree(const std::string& root, const std::string& listing) {
  std::istringstream in(listing);
  std::string line;
  std::vector<std::pair<std::string, std::int64_t>> created;
  std::int64_t n = 0;
  fs::create_directories(root);
  while (std::getline(in, line)) {
    ++n;
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind) || kind[0] == '#') continue;
    std::string mode_s, size_s, p, extra;
    if (kind == "l") {
      ls >> p >> extra;
    } else if (kind == "d") {
      ls >> mode_s >> p;
    } else {
      ls >> mode_s >> size_s >> p >> extra;
    }
    if (p.empty() || p[0] != '/') throw std::runtime_error("bad listing line: " + line);
    std::string host = root + p;
    fs::create_directories(fs::path(host).parent_path());
    if (kind == "d") {
      fs::create_directories(host);
    } else if (kind == "l") {
      fs::create_symlink(extra, host);
    } else {
      std::string prefix = kind == "s" ? "#!" + extra + "\n" : p + "\n";
      write_content(host, std::stoull(size_s), prefix, false);
    }
    if (kind != "l") ::chmod(host.c_str(), static_cast<mode_t>(std::stoul(mode_s, nullptr, 8)));
    created.emplace_back(host, 1600000000 + n);
  }
  // Stamped last so creating children does not bump their directories.
  for (const auto& [host, sec] : created) set_mtime(host, sec);
}

SlimmingFixture make_slimming_fixture(const std::string& root, std::uint64_t total, std::uint64_t touched) {
  std::mt19937_64 rng(20240601);
  SlimmingFixture f;
  auto t_sizes = split(touched, 60, rng);
  auto u_sizes = split(total - touched, 140, rng);
  std::vector<std::pair<std::string, std::uint64_t>> used, unused;
  used.emplace_back("/opt/app/bin/app", t_sizes[0]);
  for (int i = 1; i < 40; ++i) used.emplace_back("/opt/app/lib/lib" + two(i) + ".so", t_sizes[static_cast<std::size_t>(i)]);
  for (int i = 40; i < 60; ++i) used.emplace_back("/opt/app/etc/conf" + two(i), t_sizes[static_cast<std::size_t>(i)]);
  for (int i = 0; i < 50; ++i) unused.emplace_back("/opt/app/lib/unused" + two(i) + ".so", u_sizes[static_cast<std::size_t>(i)]);
  for (int i = 50; i < 120; ++i) unused.emplace_back("/opt/app/share/data/blob" + two(i), u_sizes[static_cast<std::size_t>(i)]);
  for (int i = 120; i < 140; ++i) unused.emplace_back("/usr/share/doc/app/doc" + two(i), u_sizes[static_cast<std::size_t>(i)]);

  std::int64_t mt = 1600000000;
  for (const auto& [p, size] : used) {
    fs::create_directories(fs::path(root + p).parent_path());
    write_content(root + p, size, "", false);
    set_mtime(root + p, ++mt);
    f.closure.push_back(p);
    f.closure_bytes += size;
  }
  for (const auto& [p, size] : unused) {
    fs::create_directories(fs::path(root + p).parent_path());
    write_content(root + p, size, "", true);
    set_mtime(root + p, ++mt);
  }
  ::chmod((root + "/opt/app/bin/app").c_str(), 0755);
  f.source_bytes = total;

  std::ostringstream t;
  double ts = 1700000000.0;
  auto line = [&](const std::string& call) {
    char b[32];
    std::snprintf(b, sizeof b, "%.6f", ts += 0.0001);
    t << "1 " << b << ' ' << call << '\n';
  };
  line("execve(\"/opt/app/bin/app\", [\"app\", \"--serve\"], 0x7ffe0c1d2e48 /* 4 vars */) = 0");
  for (std::size_t i = 1; i < used.size(); ++i) {
    const auto& p = used[i].first;
    line("openat(AT_FDCWD, \"" + p + "\", O_RDONLY|O_CLOEXEC) = 3<" + p + ">");
    line("read(3<" + p + ">, \"\\177ELF\"..., 832) = 832");
    line("close(3<" + p + ">) = 0");
  }
  line("openat(AT_FDCWD, \"/opt/app/var/app.log\", O_WRONLY|O_CREAT|O_APPEND, 0644) = -1 ENOENT (No such file or directory)");
  line("openat(AT_FDCWD, \"/opt/app/share/data/cache\", O_WRONLY|O_CREAT|O_TRUNC, 0644) = 3</opt/app/share/data/cache>");
  line("exit_group(0) = ?");
  f.trace = t.str();
  return f;
}

SyntheticTrace synthetic_trace(std::size_t events, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SyntheticTrace st;
  FileMeta dir;
  dir.type = FileType::Directory;
  dir.mode = 0755;
  FileMeta file;
  file.size = 4096;

  std::vector<std::string> exes;
  for (int i = 0; i < 20; ++i) exes.push_back("/usr/bin/tool" + two(i));
  std::vector<std::string> libs;
  for (int i = 0; i < 40; ++i) libs.push_back("/usr/lib/x86_64-linux-gnu/lib" + two(i) + ".so.1");
  std::vector<std::string> data;
  for (int d = 0; d < 50; ++d) {
    for (int i = 0; i < 100; ++i) data.push_back("/srv/data/d" + two(d) + "/file" + two(i) + ".dat");
  }
  const std::string entry = "/usr/local/bin/entry.sh";
  for (const auto& p : exes) st.source.add(p, file);
  for (const auto& p : libs) st.source.add(p, file);
  for (const auto& p : data) st.source.add(p, file);
  st.source.add(entry, file);
  st.source.add("/etc/ld.so.cache", file);
  st.source.add("/var/tmp", dir);
  st.executables = exes.size() + 1;

  std::string out;
  out.reserve(events * 90);
  std::size_t count = 0;
  double ts = 1700000000.0;
  char tsb[32];
  auto emit = [&](long pid, const std::string& call) {
    std::snprintf(tsb, sizeof tsb, "%.6f", ts += 0.000001);
    out += std::to_string(pid);
    out += ' ';
    out += tsb;
    out += ' ';
    out += call;
    out += '\n';
    ++count;
  };
  emit(1000, "execve(\"" + entry + "\", [\"entry.sh\"], 0x7ffd5e0f9a38 /* 5 vars */) = 0");
  long next_pid = 1001;
  std::uniform_int_distribution<int> work(50, 500);
  while (count < events) {
    const long pid = next_pid++;
    emit(1000, "clone(child_stack=NULL, flags=CLONE_CHILD_CLEARTID|CLONE_CHILD_SETTID|SIGCHLD, child_tidptr=0x7f2a) = " +
                   std::to_string(pid));
    if (count >= events) break;
    const auto& exe = exes[rng() % exes.size()];
    emit(pid, "execve(\"" + exe + "\", [\"" + exe.substr(exe.rfind('/') + 1) + "\", \"--job\", \"" +
                  std::to_string(pid) + "\"], 0x7ffd5e0f9a38 /* 5 vars */) = 0");
    const int n = work(rng);
    for (int k = 0; k < n && count < events; ++k) {
      const auto r = rng() % 100;
      if (r < 30) {
        const auto& p = rng() % 4 == 0 ? libs[rng() % libs.size()] : data[rng() % data.size()];
        emit(pid, "openat(AT_FDCWD, \"" + p + "\", O_RDONLY|O_CLOEXEC) = 3<" + p + ">");
        if (count < events) emit(pid, "read(3<" + p + ">, \"\\177ELF\\2\\1\\1\"..., 4096) = 4096");
        if (count < events) emit(pid, "close(3<" + p + ">) = 0");
      } else if (r < 50) {
        const auto& p = data[rng() % data.size()];
        emit(pid, "newfstatat(AT_FDCWD, \"" + p + "\", {st_mode=S_IFREG|0644, st_size=4096, ...}, 0) = 0");
      } else if (r < 60) {
        const std::string p = "/var/tmp/" + std::to_string(pid) + "-" + std::to_string(k) + ".out";
        emit(pid, "openat(AT_FDCWD, \"" + p + "\", O_WRONLY|O_CREAT|O_TRUNC|O_CLOEXEC, 0644) = 4<" + p + ">");
        if (count < events) emit(pid, "write(4<" + p + ">, \"ok\\n\", 3) = 3");
        if (count < events) emit(pid, "close(4<" + p + ">) = 0");
      } else if (r < 70) {
        emit(pid, "openat(AT_FDCWD, \"/etc/nonexistent-" + std::to_string(k % 7) +
                      "\", O_RDONLY) = -1 ENOENT (No such file or directory)");
      } else if (r < 80) {
        emit(pid, "mmap(NULL, 8192, PROT_READ|PROT_WRITE, MAP_PRIVATE|MAP_ANONYMOUS, -1, 0) = 0x7f2a3c000000");
      } else if (r < 90) {
        emit(pid, "openat(AT_FDCWD, \"/etc/ld.so.cache\", O_RDONLY|O_CLOEXEC) = 3</etc/ld.so.cache>");
      } else {
        emit(pid, "brk(NULL) = 0x55e1a2b3c000");
      }
    }
    if (count < events) emit(pid, "exit_group(0) = ?");
    out += std::to_string(pid) + " +++ exited with 0 +++\n";
    if (count < events) emit(1000, "wait4(-1, [{WIFEXITED(s) && WEXITSTATUS(s) == 0}], 0, NULL) = " + std::to_string(pid));
  }
  st.text = std::move(out);
  return st;
}

nlohmann::json plan_structure(const slimpart::placement::PlacementPlan& plan) {
  using nlohmann::json;
  auto files = [](const std::vector<slimpart::placement::PlacedFile>& fs) {
    json o = json::object();
    for (const auto& f : fs) o[f.path] = std::string(slimpart::placement::to_string(f.role));
    return o;
  };
  json j;
  j["containers"] = json::array();
  for (const auto& c : plan.containers) {
    json jc;
    jc["name"] = c.name;
    jc["exes"] = c.exes;
    jc["files"] = files(c.files);
    jc["volumes"] = json::array();
    for (const auto& v : c.volumes) jc["volumes"].push_back(v.mount);
    jc["stubs"] = json::array();
    for (const auto& s : c.stubs) jc["stubs"].push_back({{"path", s.path}, {"target", s.target_name}});
    jc["rpe_server"] = c.rpe_server;
    j["containers"].push_back(jc);
  }
  j["volumes"] = json::array();
  for (const auto& v : plan.volumes) {
    json jv;
    jv["mount"] = v.mount;
    jv["containers"] = json::array();
    for (int c : v.containers) jv["containers"].push_back(plan.containers[static_cast<std::size_t>(c)].name);
    jv["files"] = files(v.files);
    j["volumes"].push_back(jv);
  }
  j["shared_net"] = plan.shared_net;
  j["entry"] = plan.containers.empty() ? "" : plan.containers[static_cast<std::size_t>(plan.entry_container)].name;
  j["entry_argv"] = plan.entry_argv;
  j["skipped"] = plan.skipped;
  return j;
}

}  // namespace fixtures
