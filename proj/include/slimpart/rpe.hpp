#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slimpart/error.hpp"

// Remote process execution. A stub installed at an executable's path ships
// its invocation (argv, env, cwd, umask, ids, open descriptors) over a local
// stream socket to a server in the container that holds the real executable.
//
// Wire format, all integers little-endian:
//   frame   = "SPRP" u16 version u16 type u32 length payload[length]
//   bytes   = u32 length, raw bytes
//   list    = u32 count, count * bytes
//   Request = bytes target, list argv, list env, bytes cwd, u32 umask,
//             u32 uid, u32 gid, u32 ngroups, ngroups * u32, u32 nfds, nfds * i32
//   FdBatch = u32 n, n * i32 original numbers; the n descriptors travel as
//             SCM_RIGHTS ancillary data on the frame's first byte
//   Started = i32 pid      Exited = i32 code     Signaled = i32 signo
//   ExecFailed = i32 errno Signal = i32 signo (stub to server)
namespace slimpart::rpe {

inline constexpr char kMagic[4] = {'S', 'P', 'R', 'P'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 12;
inline constexpr std::size_t kMaxPayload = 64u << 20;
inline constexpr std::size_t kMaxFdsPerBatch = 250;

enum class FrameType : std::uint16_t {
  Request = 1,
  FdBatch = 2,
  Started = 3,
  Exited = 4,
  Signaled = 5,
  ExecFailed = 6,
  Signal = 7,
};

class ProtocolError : public Error {
 public:
  enum class Code { FrameTooShort, VersionMismatch, BadMagic, Malformed };
  ProtocolError(Code code, const std::string& what) : Error(ErrorKind::Protocol, what), code_(code) {}
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

struct Request {
  std::string target;
  std::vector<std::string> argv;
  std::vector<std::string> env;
  std::string cwd;
  std::uint32_t umask = 022;
  std::uint32_t uid = 0;
  std::uint32_t gid = 0;
  std::vector<std::uint32_t> groups;
  std::vector<int> fds;  // original descriptor numbers, in shipping order

  bool operator==(const Request&) const = default;
};

struct Frame {
  FrameType type = FrameType::Request;
  std::string payload;

  bool operator==(const Frame&) const = default;
};

std::string encode_frame(FrameType type, std::string_view payload);

// Decodes one frame from the front of `bytes`; sets *consumed to its length.
Frame decode_frame(std::string_view bytes, std::size_t* consumed = nullptr);

std::string encode_request(const Request& r);
Request decode_request(std::string_view bytes);
Request decode_request_payload(std::string_view payload);

std::string encode_int(FrameType type, std::int32_t value);
std::int32_t decode_int(const Frame& f);

std::string encode_fd_batch(const std::vector<int>& originals);
std::vector<int> decode_fd_batch(const Frame& f);

// Socket I/O. Both throw Error(Io) on transport failures.
void send_frame(int sock, FrameType type, std::string_view payload, const std::vector<int>& fds = {});
// nullopt on orderly EOF before the first byte. Received descriptors are
// close-on-exec and appended to *fds.
std::optional<Frame> recv_frame(int sock, std::vector<int>* fds = nullptr);

// Open descriptors of the calling process, excluding the one used to list them.
std::vector<int> open_fds();

// Snapshot of the calling process, shaped as the request it would send.
Request capture_request(std::string target, std::vector<std::string> argv, const std::vector<std::string>& env);

// Drops SLIMPART_RPE_* variables so they do not leak into the remote process.
std::vector<std::string> filtered_environment(char** envp);

struct StubTarget {
  std::string socket;
  std::string target;
};

// Environment overrides (SLIMPART_RPE_SOCKET + SLIMPART_RPE_TARGET) win; then
// the stub table (SLIMPART_RPE_CONFIG or /.slimpart/stubs) keyed by the path
// of the running executable.
std::optional<StubTarget> locate_target(char** envp);

// Runs one remote invocation. Returns the exit code to use; a remote death by
// signal is re-raised and only returns if raising did not terminate us.
int run_stub(const StubTarget& t, int argc, char** argv, char** envp);

struct ServerOptions {
  std::string socket_path;
  bool verbose = false;
};

int listen_on(const std::string& socket_path);

// Accepts sessions until *stop becomes true. Each session runs on its own
// thread.
void serve(int listen_fd, const ServerOptions& opts, const std::atomic<bool>* stop = nullptr);

// Listens on opts.socket_path. With an empty command it serves forever;
// otherwise it also runs `command` and returns that process's exit status
// once it ends.
int run_server(const ServerOptions& opts, const std::vector<std::string>& command = {});

}  // namespace slimpart::rpe
