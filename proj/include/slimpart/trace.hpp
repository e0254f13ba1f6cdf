#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace slimpart::trace {

// Syntactic type hint for a raw argument token. Handlers interpret arguments
// positionally; the hint only records what the text looked like.
enum class ArgKind {
  String,   // "..."; text holds the decoded bytes
  Integer,  // 42, -1, 0x1f, 0644
  Fd,       // 3</etc/hosts>, AT_FDCWD; annotation holds the decoded path
  Flags,    // O_RDONLY|O_CLOEXEC, S_IFIFO|0644
  Struct,   // {sa_family=AF_UNIX, ...}
  Array,    // [3, 4], ["sh", "-c"]
  Other,    // NULL, key=value, 0x7ffd... /* 3 vars */, anything else
};

std::string_view to_string(ArgKind kind);
std::optional<ArgKind> arg_kind_from_string(std::string_view s);

struct Arg {
  ArgKind kind = ArgKind::Other;
  std::string text;
  std::optional<std::string> annotation;

  bool operator==(const Arg&) const = default;
};

struct SyscallEvent {
  std::int64_t tid = 0;
  std::optional<double> ts;
  std::string name;
  std::vector<Arg> args;
  std::int64_t ret = 0;
  std::optional<std::string> err;
  // -y annotation on the return value (e.g. the path of a returned fd).
  std::optional<std::string> ret_annotation;

  bool failed() const noexcept { return ret < 0; }
  bool operator==(const SyscallEvent&) const = default;
};

// One half of an interrupted call: "name(args <unfinished ...>" or
// "<... name resumed>rest".
struct Continuation {
  std::int64_t tid = 0;
  std::optional<double> ts;
  std::string name;
  bool resumed = false;
  std::string fragment;
};

// Signal deliveries, exit notices, tracer chatter, blank lines.
struct Noise {};

using ParsedLine = std::variant<SyscallEvent, Continuation, Noise>;

// Parses one line of `strace -f -ttt -y -s N` output. Throws MalformedLine
// (carrying `file` and `line_no`) when the structure cannot be recognised.
ParsedLine parse_strace_line(std::string_view line, std::size_t line_no = 0,
                             std::string_view file = "<input>");

// Splits the text between the parentheses of a call into argument tokens.
std::vector<Arg> parse_args(std::string_view text);

// Decodes a C-style quoted string body (without the quotes) into raw bytes.
std::string unescape(std::string_view body);

using Log = std::vector<SyscallEvent>;

struct ExecutionLog {
  std::vector<Log> logs;

  bool operator==(const ExecutionLog&) const = default;
};

enum class Format { Auto, StraceText, Canonical };

struct LoadOptions {
  Format format = Format::Auto;
  // Malformed lines throw when strict; otherwise they are reported as warnings
  // and the line is skipped.
  bool strict = false;
};

struct LoadReport {
  std::vector<std::string> warnings;
  std::size_t lines = 0;
  std::size_t events = 0;
  std::size_t noise = 0;
  std::size_t malformed = 0;
  std::size_t unpaired = 0;
};

// Parses a whole strace text capture into one Log, merging unfinished and
// resumed halves. The merged event takes the position of its first half.
Log parse_strace_text(std::string_view text, std::string_view source, const LoadOptions& opts,
                      LoadReport* report = nullptr);

// Each path becomes one Log. Files are parsed in parallel; the result does not
// depend on scheduling.
ExecutionLog load_execution_log(const std::vector<std::string>& paths,
                                const LoadOptions& opts = {}, LoadReport* report = nullptr);

inline constexpr std::string_view kCanonicalHeader = "#slimpart-trace v1";

void write_canonical(std::ostream& out, const Log& log);
Log read_canonical(std::string_view text, std::string_view source = "<input>");

}  // namespace slimpart::trace
