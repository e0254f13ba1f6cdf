#include "slimpart/rpe.hpp"

#include <dirent.h>
#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/signalfd.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#ifndef CLOSE_RANGE_CLOEXEC
#define CLOSE_RANGE_CLOEXEC (1U << 2)
#endif

namespace slimpart::rpe {

namespace {

using Code = ProtocolError::Code;

void put_u16(std::string& out, std::uint16_t v) {
  out += static_cast<char>(v & 0xff);
  out += static_cast<char>(v >> 8);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_bytes(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

void put_list(std::string& out, const std::vector<std::string>& v) {
  put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (const auto& s : v) put_bytes(out, s);
}

std::uint32_t get_u32_at(std::string_view s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}

  std::uint32_t u32() {
    need(4);
    auto v = get_u32_at(s_, pos_);
    pos_ += 4;
    return v;
  }

  std::string bytes() {
    auto n = u32();
    need(n);
    std::string out(s_.substr(pos_, n));
    pos_ += n;
    return out;
  }

  std::vector<std::string> list() {
    auto n = u32();
    // Each element needs at least its length prefix.
    need(static_cast<std::size_t>(n) * 4);
    std::vector<std::string> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(bytes());
    return out;
  }

  void finish() const {
    if (pos_ != s_.size()) throw ProtocolError(Code::Malformed, "trailing bytes in frame payload");
  }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw ProtocolError(Code::FrameTooShort, "frame payload truncated");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

std::string io_error(const std::string& what) { return what + ": " + std::strerror(errno); }

// Reads exactly n bytes, collecting any descriptors that arrive alongside.
// Returns false on EOF before the first byte.
bool read_exact(int sock, char* buf, std::size_t n, std::vector<int>* fds) {
  std::size_t got = 0;
  while (got < n) {
    iovec iov{buf + got, n - got};
    alignas(cmsghdr) char control[CMSG_SPACE(sizeof(int) * kMaxFdsPerBatch)];
    msghdr msg{};
    msg.msg_iov = &iov;
    msg.msg_iovlen = 1;
    msg.msg_control = control;
    msg.msg_controllen = sizeof control;
    ssize_t r = ::recvmsg(sock, &msg, MSG_CMSG_CLOEXEC);
    if (r < 0 && errno == EINTR) continue;
    if (r < 0) throw Error(ErrorKind::Io, io_error("recvmsg"));
    for (cmsghdr* c = CMSG_FIRSTHDR(&msg); c; c = CMSG_NXTHDR(&msg, c)) {
      if (c->cmsg_level != SOL_SOCKET || c->cmsg_type != SCM_RIGHTS) continue;
      std::size_t count = (c->cmsg_len - CMSG_LEN(0)) / sizeof(int);
      for (std::size_t i = 0; i < count; ++i) {
        int fd;
        std::memcpy(&fd, CMSG_DATA(c) + i * sizeof(int), sizeof fd);
        if (fds) fds->push_back(fd);
        else ::close(fd);
      }
    }
    if (msg.msg_flags & MSG_CTRUNC) throw Error(ErrorKind::Io, "descriptor batch truncated");
    if (r == 0) {
      if (got == 0) return false;
      throw ProtocolError(Code::FrameTooShort, "connection closed inside a frame");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void write_all(int sock, std::string_view data, const std::vector<int>& fds) {
  std::size_t sent = 0;
  bool first = true;
  while (sent < data.size()) {
    iovec iov{const_cast<char*>(data.data() + sent), data.size() - sent};
    msghdr msg{};
    msg.msg_iov = &iov;
    msg.msg_iovlen = 1;
    std::vector<char> control;
    if (first && !fds.empty()) {
      control.resize(CMSG_SPACE(sizeof(int) * fds.size()));
      msg.msg_control = control.data();
      msg.msg_controllen = control.size();
      cmsghdr* c = CMSG_FIRSTHDR(&msg);
      c->cmsg_level = SOL_SOCKET;
      c->cmsg_type = SCM_RIGHTS;
      c->cmsg_len = CMSG_LEN(sizeof(int) * fds.size());
      std::memcpy(CMSG_DATA(c), fds.data(), sizeof(int) * fds.size());
    }
    ssize_t r = ::sendmsg(sock, &msg, MSG_NOSIGNAL);
    if (r < 0 && errno == EINTR) continue;
    if (r < 0) throw Error(ErrorKind::Io, io_error("sendmsg"));
    sent += static_cast<std::size_t>(r);
    first = false;
  }
}

}  // namespace

std::string encode_frame(FrameType type, std::string_view payload) {
  if (payload.size() > kMaxPayload) throw ProtocolError(Code::Malformed, "frame payload too large");
  std::string out(kMagic, sizeof kMagic);
  put_u16(out, kVersion);
  put_u16(out, static_cast<std::uint16_t>(type));
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out.append(payload);
  return out;
}

Frame decode_frame(std::string_view bytes, std::size_t* consumed) {
  if (bytes.size() < kHeaderSize) throw ProtocolError(Code::FrameTooShort, "frame shorter than its header");
  if (bytes.substr(0, 4) != std::string_view(kMagic, 4)) throw ProtocolError(Code::BadMagic, "bad frame magic");
  auto version = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[4]) | (static_cast<unsigned char>(bytes[5]) << 8));
  if (version != kVersion) {
    throw ProtocolError(Code::VersionMismatch, "protocol version " + std::to_string(version) + ", expected " +
                                                   std::to_string(kVersion));
  }
  auto type = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[6]) | (static_cast<unsigned char>(bytes[7]) << 8));
  if (type < 1 || type > 7) throw ProtocolError(Code::Malformed, "unknown frame type " + std::to_string(type));
  auto len = get_u32_at(bytes, 8);
  if (len > kMaxPayload) throw ProtocolError(Code::Malformed, "frame payload too large");
  if (bytes.size() - kHeaderSize < len) throw ProtocolError(Code::FrameTooShort, "frame payload truncated");
  if (consumed) *consumed = kHeaderSize + len;
  return {static_cast<FrameType>(type), std::string(bytes.substr(kHeaderSize, len))};
}

std::string encode_request(const Request& r) {
  std::string p;
  put_bytes(p, r.target);
  put_list(p, r.argv);
  put_list(p, r.env);
  put_bytes(p, r.cwd);
  put_u32(p, r.umask);
  put_u32(p, r.uid);
  put_u32(p, r.gid);
  put_u32(p, static_cast<std::uint32_t>(r.groups.size()));
  for (auto g : r.groups) put_u32(p, g);
  put_u32(p, static_cast<std::uint32_t>(r.fds.size()));
  for (int fd : r.fds) put_u32(p, static_cast<std::uint32_t>(fd));
  return encode_frame(FrameType::Request, p);
}

Request decode_request_payload(std::string_view payload) {
  Reader in(payload);
  Request r;
  r.target = in.bytes();
  r.argv = in.list();
  r.env = in.list();
  r.cwd = in.bytes();
  r.umask = in.u32();
  r.uid = in.u32();
  r.gid = in.u32();
  auto ng = in.u32();
  if (ng > 65536) throw ProtocolError(Code::Malformed, "too many groups");
  for (std::uint32_t i = 0; i < ng; ++i) r.groups.push_back(in.u32());
  auto nf = in.u32();
  if (nf > 4096) throw ProtocolError(Code::Malformed, "too many descriptors");
  for (std::uint32_t i = 0; i < nf; ++i) {
    auto fd = static_cast<std::int32_t>(in.u32());
    if (fd < 0) throw ProtocolError(Code::Malformed, "negative descriptor number");
    if (std::find(r.fds.begin(), r.fds.end(), fd) != r.fds.end()) {
      throw ProtocolError(Code::Malformed, "duplicate descriptor number");
    }
    r.fds.push_back(fd);
  }
  in.finish();
  return r;
}

Request decode_request(std::string_view bytes) {
  std::size_t used = 0;
  Frame f = decode_frame(bytes, &used);
  if (f.type != FrameType::Request) throw ProtocolError(Code::Malformed, "not a request frame");
  if (used != bytes.size()) throw ProtocolError(Code::Malformed, "trailing bytes after request frame");
  return decode_request_payload(f.payload);
}

std::string encode_int(FrameType type, std::int32_t value) {
  std::string p;
  put_u32(p, static_cast<std::uint32_t>(value));
  return encode_frame(type, p);
}

std::int32_t decode_int(const Frame& f) {
  Reader in(f.payload);
  auto v = static_cast<std::int32_t>(in.u32());
  in.finish();
  return v;
}

std::string encode_fd_batch(const std::vector<int>& originals) {
  std::string p;
  if (originals.size() > kMaxFdsPerBatch) throw ProtocolError(Code::Malformed, "descriptor batch too large");
  put_u32(p, static_cast<std::uint32_t>(originals.size()));
  for (int fd : originals) put_u32(p, static_cast<std::uint32_t>(fd));
  return encode_frame(FrameType::FdBatch, p);
}

std::vector<int> decode_fd_batch(const Frame& f) {
  Reader in(f.payload);
  auto n = in.u32();
  if (n > kMaxFdsPerBatch) throw ProtocolError(Code::Malformed, "descriptor batch too large");
  std::vector<int> out;
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(static_cast<int>(in.u32()));
  in.finish();
  return out;
}

void send_frame(int sock, FrameType type, std::string_view payload, const std::vector<int>& fds) {
  write_all(sock, encode_frame(type, payload), fds);
}

std::optional<Frame> recv_frame(int sock, std::vector<int>* fds) {
  char header[kHeaderSize];
  if (!read_exact(sock, header, kHeaderSize, fds)) return std::nullopt;
  // Validate the header through the shared decoder with an empty payload.
  std::string probe(header, kHeaderSize);
  auto len = get_u32_at(probe, 8);
  if (len > kMaxPayload) throw ProtocolError(Code::Malformed, "frame payload too large");
  std::string whole = probe;
  whole.resize(kHeaderSize + len);
  if (len > 0 && !read_exact(sock, whole.data() + kHeaderSize, len, fds)) {
    throw ProtocolError(Code::FrameTooShort, "connection closed inside a frame");
  }
  return decode_frame(whole);
}

std::vector<int> open_fds() {
  std::vector<int> out;
  DIR* d = ::opendir("/proc/self/fd");
  if (!d) {
    // Fallback without procfs: probe the low range.
    for (int fd = 0; fd < 1024; ++fd) {
      if (::fcntl(fd, F_GETFD) != -1) out.push_back(fd);
    }
    return out;
  }
  int own = ::dirfd(d);
  while (dirent* e = ::readdir(d)) {
    if (e->d_name[0] < '0' || e->d_name[0] > '9') continue;
    int fd = std::atoi(e->d_name);
    if (fd != own) out.push_back(fd);
  }
  ::closedir(d);
  std::sort(out.begin(), out.end());
  return out;
}

Request capture_request(std::string target, std::vector<std::string> argv, const std::vector<std::string>& env) {
  Request r;
  r.target = std::move(target);
  r.argv = std::move(argv);
  r.env = env;
  std::string cwd(4096, '\0');
  while (!::getcwd(cwd.data(), cwd.size())) {
    if (errno != ERANGE) {
      cwd = "/";
      break;
    }
    cwd.resize(cwd.size() * 2);
  }
  r.cwd = cwd.c_str();
  mode_t m = ::umask(0);
  ::umask(m);
  r.umask = m;
  r.uid = ::geteuid();
  r.gid = ::getegid();
  int n = ::getgroups(0, nullptr);
  if (n > 0) {
    std::vector<gid_t> g(static_cast<std::size_t>(n));
    n = ::getgroups(n, g.data());
    for (int i = 0; i < n; ++i) r.groups.push_back(g[static_cast<std::size_t>(i)]);
  }
  r.fds = open_fds();
  return r;
}

std::vector<std::string> filtered_environment(char** envp) {
  std::vector<std::string> out;
  for (char** e = envp; e && *e; ++e) {
    if (std::strncmp(*e, "SLIMPART_RPE_", 13) == 0) continue;
    out.emplace_back(*e);
  }
  return out;
}

std::optional<StubTarget> locate_target(char** envp) {
  auto get = [&](const char* key) -> std::optional<std::string> {
    std::size_t k = std::strlen(key);
    for (char** e = envp; e && *e; ++e) {
      if (std::strncmp(*e, key, k) == 0 && (*e)[k] == '=') return std::string(*e + k + 1);
    }
    return std::nullopt;
  };
  auto sock = get("SLIMPART_RPE_SOCKET");
  auto target = get("SLIMPART_RPE_TARGET");
  if (sock && target) return StubTarget{*sock, *target};

  std::string self(4096, '\0');
  auto n = ::readlink("/proc/self/exe", self.data(), self.size());
  if (n <= 0) return std::nullopt;
  self.resize(static_cast<std::size_t>(n));
  std::ifstream table(get("SLIMPART_RPE_CONFIG").value_or("/.slimpart/stubs"));
  std::string line;
  while (std::getline(table, line)) {
    auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    if (line.substr(0, tab) == self) return StubTarget{sock.value_or(line.substr(tab + 1)), self};
  }
  return std::nullopt;
}

namespace {

constexpr int kForwarded[] = {SIGHUP, SIGINT, SIGQUIT, SIGTERM, SIGUSR1, SIGUSR2, SIGALRM, SIGWINCH, SIGCONT};

[[noreturn]] void die_like(int sig) {
  ::signal(sig, SIG_DFL);
  sigset_t s;
  sigemptyset(&s);
  sigaddset(&s, sig);
  ::sigprocmask(SIG_UNBLOCK, &s, nullptr);
  ::raise(sig);
  ::_exit(128 + sig);
}

}  // namespace

int run_stub(const StubTarget& t, int argc, char** argv, char** envp) {
  // The descriptor scan comes first so nothing the stub opens is shipped.
  std::vector<std::string> args(argv, argv + argc);
  Request req = capture_request(t.target, std::move(args), filtered_environment(envp));

  sigset_t mask;
  sigemptyset(&mask);
  for (int s : kForwarded) sigaddset(&mask, s);
  ::sigprocmask(SIG_BLOCK, &mask, nullptr);
  int sfd = ::signalfd(-1, &mask, SFD_CLOEXEC);

  int sock = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (sock < 0 || t.socket.size() >= sizeof addr.sun_path) {
    std::cerr << "slimpart-stub: cannot reach RPE server at " << t.socket << "\n";
    return 127;
  }
  std::memcpy(addr.sun_path, t.socket.c_str(), t.socket.size() + 1);
  if (::connect(sock, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    std::cerr << "slimpart-stub: cannot reach RPE server at " << t.socket << ": " << std::strerror(errno) << "\n";
    return 127;
  }

  try {
    write_all(sock, encode_request(req), {});
    for (std::size_t i = 0; i < req.fds.size(); i += kMaxFdsPerBatch) {
      std::vector<int> batch(req.fds.begin() + static_cast<std::ptrdiff_t>(i),
                             req.fds.begin() + static_cast<std::ptrdiff_t>(std::min(req.fds.size(), i + kMaxFdsPerBatch)));
      write_all(sock, encode_fd_batch(batch), batch);
    }
    // The remote child holds its own copies now.
    for (int fd : req.fds) {
      if (fd > 2) ::close(fd);
    }

    for (;;) {
      pollfd p[2] = {{sock, POLLIN, 0}, {sfd, POLLIN, 0}};
      int r = ::poll(p, sfd >= 0 ? 2 : 1, -1);
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) throw Error(ErrorKind::Io, io_error("poll"));
      if (sfd >= 0 && (p[1].revents & POLLIN)) {
        signalfd_siginfo si{};
        if (::read(sfd, &si, sizeof si) == static_cast<ssize_t>(sizeof si)) {
          write_all(sock, encode_int(FrameType::Signal, static_cast<std::int32_t>(si.ssi_signo)), {});
        }
      }
      if (p[0].revents & (POLLIN | POLLHUP | POLLERR)) {
        auto f = recv_frame(sock, nullptr);
        if (!f) {
          std::cerr << "slimpart-stub: RPE server closed the session\n";
          return 127;
        }
        switch (f->type) {
          case FrameType::Started: break;
          case FrameType::Exited: return decode_int(*f) & 0xff;
          case FrameType::Signaled: die_like(decode_int(*f));
          case FrameType::ExecFailed: {
            int err = decode_int(*f);
            std::cerr << t.target << ": " << std::strerror(err) << "\n";
            return err == ENOENT ? 127 : 126;
          }
          default:
            throw ProtocolError(Code::Malformed, "unexpected frame from server");
        }
      }
    }
  } catch (const Error& e) {
    std::cerr << "slimpart-stub: " << e.what() << "\n";
    return 127;
  }
}

int listen_on(const std::string& socket_path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (socket_path.size() >= sizeof addr.sun_path) throw Error(ErrorKind::Precondition, "socket path too long");
  std::memcpy(addr.sun_path, socket_path.c_str(), socket_path.size() + 1);
  int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw Error(ErrorKind::Io, io_error("socket"));
  ::unlink(socket_path.c_str());
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 128) != 0) {
    int saved = errno;
    ::close(fd);
    errno = saved;
    throw Error(ErrorKind::Io, io_error("cannot listen on " + socket_path));
  }
  ::chmod(socket_path.c_str(), 0666);
  return fd;
}

namespace {

std::mutex log_mutex;

void log(const ServerOptions& opts, const std::string& msg) {
  if (!opts.verbose) return;
  std::lock_guard lock(log_mutex);
  std::cerr << "slimpart-rpe-server: " << msg << "\n";
}

int pidfd_open(pid_t pid) { return static_cast<int>(::syscall(SYS_pidfd_open, pid, 0)); }

struct Prepared {
  std::vector<std::string> argv_store, env_store;
  std::vector<char*> argv, env;
  std::vector<gid_t> groups;
};

// Everything below runs in the forked child of a threaded process, so it is
// limited to async-signal-safe calls.
[[noreturn]] void child_exec(const Request& r, Prepared& p, const std::vector<int>& received, int errpipe) {
  auto fail = [&](int err) {
    while (::write(errpipe, &err, sizeof err) < 0 && errno == EINTR) {
    }
    ::_exit(127);
  };

  struct sigaction dfl {};
  dfl.sa_handler = SIG_DFL;
  for (int s = 1; s < NSIG; ++s) ::sigaction(s, &dfl, nullptr);
  sigset_t none;
  sigemptyset(&none);
  ::sigprocmask(SIG_SETMASK, &none, nullptr);

  int base = errpipe;
  for (int fd : r.fds) base = std::max(base, fd);
  for (int fd : received) base = std::max(base, fd);
  base += 1;
  int err_tmp = ::fcntl(errpipe, F_DUPFD_CLOEXEC, base);
  if (err_tmp < 0) fail(errno);
  errpipe = err_tmp;
  int temps[4096];
  const std::size_t n = std::min<std::size_t>(received.size(), 4096);
  for (std::size_t i = 0; i < n; ++i) {
    temps[i] = ::fcntl(received[i], F_DUPFD_CLOEXEC, base);
    if (temps[i] < 0) fail(errno);
  }
  // Nothing else may leak into the target.
  if (::syscall(SYS_close_range, 0u, ~0u, CLOSE_RANGE_CLOEXEC) != 0) {
    for (int fd = 0; fd < base; ++fd) ::fcntl(fd, F_SETFD, FD_CLOEXEC);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (::dup2(temps[i], r.fds[i]) < 0) fail(errno);
    ::close(temps[i]);
  }

  if (::chdir(r.cwd.c_str()) != 0 && ::chdir("/") != 0) fail(errno);
  ::umask(static_cast<mode_t>(r.umask));

  gid_t cur[256];
  int ncur = ::getgroups(256, cur);
  bool same_groups = ncur == static_cast<int>(p.groups.size()) &&
                     std::is_permutation(p.groups.begin(), p.groups.end(), cur);
  if (!same_groups && ::syscall(SYS_setgroups, p.groups.size(), p.groups.data()) != 0) fail(errno);
  if ((::getgid() != r.gid || ::getegid() != r.gid) && ::syscall(SYS_setresgid, r.gid, r.gid, r.gid) != 0) {
    fail(errno);
  }
  if ((::getuid() != r.uid || ::geteuid() != r.uid) && ::syscall(SYS_setresuid, r.uid, r.uid, r.uid) != 0) {
    fail(errno);
  }

  ::execve(r.target.c_str(), p.argv.data(), p.env.data());
  fail(errno);
  ::_exit(127);
}

void run_session(int conn, ServerOptions opts) {
  std::vector<int> received;
  auto close_received = [&] {
    for (int fd : received) ::close(fd);
    received.clear();
  };
  try {
    auto first = recv_frame(conn, &received);
    if (!first) {
      ::close(conn);
      return;
    }
    if (first->type != FrameType::Request) throw ProtocolError(Code::Malformed, "session must start with a request");
    Request r = decode_request_payload(first->payload);
    if (!received.empty()) throw ProtocolError(Code::Malformed, "descriptors attached to the request frame");
    std::vector<int> originals;
    while (originals.size() < r.fds.size()) {
      std::size_t before = received.size();
      auto f = recv_frame(conn, &received);
      if (!f || f->type != FrameType::FdBatch) throw ProtocolError(Code::Malformed, "expected a descriptor batch");
      auto nums = decode_fd_batch(*f);
      if (received.size() - before != nums.size()) {
        throw ProtocolError(Code::Malformed, "descriptor batch count does not match its payload");
      }
      originals.insert(originals.end(), nums.begin(), nums.end());
    }
    if (originals != r.fds) throw ProtocolError(Code::Malformed, "descriptor batches do not match the manifest");
    log(opts, "exec " + r.target + " with " + std::to_string(r.fds.size()) + " descriptors");

    Prepared p;
    p.argv_store = r.argv;
    p.env_store = r.env;
    for (auto& s : p.argv_store) p.argv.push_back(s.data());
    p.argv.push_back(nullptr);
    for (auto& s : p.env_store) p.env.push_back(s.data());
    p.env.push_back(nullptr);
    p.groups.assign(r.groups.begin(), r.groups.end());

    int pipefd[2];
    if (::pipe2(pipefd, O_CLOEXEC) != 0) throw Error(ErrorKind::Io, io_error("pipe2"));
    pid_t pid = ::fork();
    if (pid < 0) {
      ::close(pipefd[0]);
      ::close(pipefd[1]);
      throw Error(ErrorKind::Io, io_error("fork"));
    }
    if (pid == 0) child_exec(r, p, received, pipefd[1]);
    ::close(pipefd[1]);
    close_received();

    int err = 0;
    ssize_t got;
    while ((got = ::read(pipefd[0], &err, sizeof err)) < 0 && errno == EINTR) {
    }
    ::close(pipefd[0]);
    if (got == static_cast<ssize_t>(sizeof err)) {
      int status;
      while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
      }
      log(opts, "exec " + r.target + " failed: " + std::strerror(err));
      write_all(conn, encode_int(FrameType::ExecFailed, err), {});
      ::close(conn);
      return;
    }
    write_all(conn, encode_int(FrameType::Started, pid), {});

    int pfd = pidfd_open(pid);
    bool peer_open = true;
    for (;;) {
      pollfd fds[2] = {{pfd, POLLIN, 0}, {conn, POLLIN, 0}};
      int nfds = peer_open ? 2 : 1;
      if (pfd < 0) {
        // Without pidfd support fall back to a short polling interval.
        fds[0].fd = -1;
      }
      int rc = ::poll(fds, static_cast<nfds_t>(nfds), pfd < 0 ? 20 : -1);
      if (rc < 0 && errno == EINTR) continue;
      int status = 0;
      pid_t done = ::waitpid(pid, &status, WNOHANG);
      if (done == pid) {
        if (WIFSIGNALED(status)) {
          if (peer_open) write_all(conn, encode_int(FrameType::Signaled, WTERMSIG(status)), {});
        } else if (peer_open) {
          write_all(conn, encode_int(FrameType::Exited, WEXITSTATUS(status)), {});
        }
        break;
      }
      if (peer_open && (fds[1].revents & (POLLIN | POLLHUP | POLLERR))) {
        std::optional<Frame> f;
        try {
          f = recv_frame(conn, nullptr);
        } catch (const Error&) {
          f.reset();
        }
        if (!f) {
          log(opts, "stub went away; killing " + std::to_string(pid));
          ::kill(pid, SIGKILL);
          peer_open = false;
        } else if (f->type == FrameType::Signal) {
          ::kill(pid, decode_int(*f));
        }
      }
    }
    if (pfd >= 0) ::close(pfd);
  } catch (const Error& e) {
    std::lock_guard lock(log_mutex);
    std::cerr << "slimpart-rpe-server: session dropped: " << e.what() << "\n";
  }
  close_received();
  ::close(conn);
}

}  // namespace

void serve(int listen_fd, const ServerOptions& opts, const std::atomic<bool>* stop) {
  for (;;) {
    if (stop && stop->load()) return;
    pollfd p{listen_fd, POLLIN, 0};
    int rc = ::poll(&p, 1, stop ? 100 : -1);
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) throw Error(ErrorKind::Io, io_error("poll"));
    if (rc == 0) continue;
    int conn = ::accept4(listen_fd, nullptr, nullptr, SOCK_CLOEXEC);
    if (conn < 0) {
      if (errno == EINTR || errno == ECONNABORTED || errno == EAGAIN) continue;
      throw Error(ErrorKind::Io, io_error("accept4"));
    }
    std::thread(run_session, conn, opts).detach();
  }
}

int run_server(const ServerOptions& opts, const std::vector<std::string>& command) {
  int fd = listen_on(opts.socket_path);
  log(opts, "listening on " + opts.socket_path);
  if (command.empty()) {
    serve(fd, opts);
    return 0;
  }
  std::vector<std::string> store = command;
  std::vector<char*> argv;
  for (auto& s : store) argv.push_back(s.data());
  argv.push_back(nullptr);
  pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorKind::Io, io_error("fork"));
  if (pid == 0) {
    ::execvp(argv[0], argv.data());
    std::cerr << "slimpart-rpe-server: cannot run " << command[0] << ": " << std::strerror(errno) << "\n";
    ::_exit(errno == ENOENT ? 127 : 126);
  }
  std::atomic<bool> stop{false};
  std::thread t([&] { serve(fd, opts, &stop); });
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  stop = true;
  t.join();
  ::close(fd);
  ::unlink(opts.socket_path.c_str());
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return WEXITSTATUS(status);
}

}  // namespace slimpart::rpe
