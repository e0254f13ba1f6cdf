#include "slimpart/trace.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <future>
#include <map>
#include <ostream>
#include <sstream>

#include "slimpart/error.hpp"

namespace slimpart::trace {

namespace {

constexpr std::string_view kUnfinished = "<unfinished ...>";

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_space(char c) { return c == ' ' || c == '\t'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }
bool ends_with(std::string_view s, std::string_view p) {
  return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  if (s.empty()) return std::nullopt;
  bool neg = false;
  if (s.front() == '-') {
    neg = true;
    s.remove_prefix(1);
  }
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
  auto r = static_cast<std::int64_t>(v);
  return neg ? -r : r;
}

// Scanner shared by argument splitting and close-paren search. It tracks
// quotes, bracket depth, -y annotations and /* */ comments.
struct Scanner {
  std::string_view s;
  std::size_t i = 0;
  int depth = 0;

  // Returns true if position i starts an fd annotation "<...>".
  bool annotation_at(std::size_t at) const {
    if (s[at] != '<' || at == 0) return false;
    if (at + 1 < s.size() && s[at + 1] == '<') return false;
    char prev = s[at - 1];
    return is_digit(prev) || prev == 'D';  // digits or AT_FDCWD
  }

  void skip_quoted() {
    ++i;
    while (i < s.size() && s[i] != '"') {
      if (s[i] == '\\') ++i;
      ++i;
    }
    if (i < s.size()) ++i;
  }

  void skip_annotation() {
    ++i;
    while (i < s.size() && s[i] != '>') {
      if (s[i] == '\\') ++i;
      ++i;
    }
    if (i < s.size()) ++i;
  }

  bool at_comment() const { return i + 1 < s.size() && s[i] == '/' && s[i + 1] == '*'; }

  void skip_comment() {
    auto end = s.find("*/", i + 2);
    i = end == std::string_view::npos ? s.size() : end + 2;
  }
};

// Position of the ')' that closes the argument list starting at `open + 1`.
std::optional<std::size_t> find_close_paren(std::string_view s, std::size_t open) {
  Scanner sc{s, open + 1, 0};
  while (sc.i < s.size()) {
    char c = s[sc.i];
    if (c == '"') {
      sc.skip_quoted();
    } else if (sc.annotation_at(sc.i)) {
      sc.skip_annotation();
    } else if (sc.at_comment()) {
      sc.skip_comment();
    } else if (c == '(' || c == '[' || c == '{') {
      ++sc.depth;
      ++sc.i;
    } else if (c == ']' || c == '}') {
      --sc.depth;
      ++sc.i;
    } else if (c == ')') {
      if (sc.depth == 0) return sc.i;
      --sc.depth;
      ++sc.i;
    } else {
      ++sc.i;
    }
  }
  return std::nullopt;
}

Arg classify(std::string_view tok) {
  Arg a;
  if (tok.empty()) return a;
  if (tok.front() == '"') {
    std::size_t i = 1;
    while (i < tok.size() && tok[i] != '"') {
      if (tok[i] == '\\') ++i;
      ++i;
    }
    a.kind = ArgKind::String;
    a.text = unescape(tok.substr(1, std::min(i, tok.size()) - 1));
    return a;
  }
  if (tok.front() == '{') {
    a.kind = ArgKind::Struct;
    a.text = std::string(tok);
    return a;
  }
  if (tok.front() == '[') {
    a.kind = ArgKind::Array;
    a.text = std::string(tok);
    return a;
  }
  if (auto lt = tok.find('<'); lt != std::string_view::npos && lt > 0 && tok.back() == '>') {
    auto head = tok.substr(0, lt);
    if (head == "AT_FDCWD" || parse_int(head)) {
      a.kind = ArgKind::Fd;
      a.text = std::string(head);
      a.annotation = unescape(tok.substr(lt + 1, tok.size() - lt - 2));
      return a;
    }
  }
  if (tok == "AT_FDCWD") {
    a.kind = ArgKind::Fd;
    a.text = std::string(tok);
    return a;
  }
  if (parse_int(tok)) {
    a.kind = ArgKind::Integer;
    a.text = std::string(tok);
    return a;
  }
  bool flags = std::all_of(tok.begin(), tok.end(), [](char c) {
    return std::isupper(static_cast<unsigned char>(c)) || is_digit(c) || c == '_' || c == '|';
  });
  if (flags && std::any_of(tok.begin(), tok.end(),
                           [](char c) { return std::isupper(static_cast<unsigned char>(c)); })) {
    a.kind = tok == "NULL" ? ArgKind::Other : ArgKind::Flags;
    a.text = std::string(tok);
    return a;
  }
  a.kind = ArgKind::Other;
  a.text = std::string(tok);
  return a;
}

std::optional<double> parse_timestamp(std::string_view tok) {
  if (tok.find(':') != std::string_view::npos) {
    // -tt wall clock: HH:MM:SS.ffffff, folded to seconds since midnight.
    double parts[3] = {0, 0, 0};
    int n = 0;
    std::size_t start = 0;
    while (n < 3) {
      auto end = tok.find(':', start);
      auto piece = tok.substr(start, end == std::string_view::npos ? tok.npos : end - start);
      double v = 0;
      auto [p, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), v);
      if (ec != std::errc() || p != piece.data() + piece.size()) return std::nullopt;
      parts[n++] = v;
      if (end == std::string_view::npos) break;
      start = end + 1;
    }
    if (n != 3) return std::nullopt;
    return parts[0] * 3600 + parts[1] * 60 + parts[2];
  }
  double v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) return std::nullopt;
  return v;
}

bool looks_like_timestamp(std::string_view tok) {
  if (tok.empty() || !is_digit(tok.front())) return false;
  bool punct = false;
  for (char c : tok) {
    if (c == '.' || c == ':') {
      punct = true;
    } else if (!is_digit(c)) {
      return false;
    }
  }
  return punct;
}

// Parses "= RET [ERR] [(...)] [<dur>]" (text begins right after ')').
void parse_return(std::string_view rest, SyscallEvent& ev, std::size_t line_no,
                  std::string_view file) {
  rest = trim(rest);
  if (rest.empty() || rest.front() != '=') {
    throw MalformedLine(std::string(file), line_no, "expected '=' after argument list");
  }
  rest = trim(rest.substr(1));
  std::size_t i = 0;
  while (i < rest.size() && !is_space(rest[i]) && rest[i] != '<') ++i;
  auto ret_tok = rest.substr(0, i);
  rest.remove_prefix(i);
  bool unknown = false;
  if (ret_tok == "?") {
    unknown = true;
    ev.ret = 0;
  } else if (auto v = parse_int(ret_tok)) {
    ev.ret = *v;
  } else {
    throw MalformedLine(std::string(file), line_no, "bad return value '" + std::string(ret_tok) + "'");
  }
  if (!rest.empty() && rest.front() == '<') {
    std::size_t j = 1;
    while (j < rest.size() && rest[j] != '>') {
      if (rest[j] == '\\') ++j;
      ++j;
    }
    auto inner = rest.substr(1, std::min(j, rest.size()) - 1);
    // "<unavailable>" follows "?"; durations look like "<0.000012>".
    if (!unknown && !looks_like_timestamp(inner)) ev.ret_annotation = unescape(inner);
    rest.remove_prefix(std::min(j + 1, rest.size()));
  }
  rest = trim(rest);
  if (!rest.empty() && (std::isupper(static_cast<unsigned char>(rest.front())))) {
    std::size_t j = 0;
    while (j < rest.size() && is_ident(rest[j])) ++j;
    ev.err = std::string(rest.substr(0, j));
    rest = trim(rest.substr(j));
  }
  if (!rest.empty() && rest.front() != '(' && rest.front() != '<') {
    throw MalformedLine(std::string(file), line_no,
                        "unexpected text after return value: '" + std::string(rest) + "'");
  }
  if (unknown && ev.err) ev.ret = -1;
  if (ev.ret >= 0) ev.err.reset();
  if (ev.ret < 0 && !ev.err) ev.err = "EUNKNOWN";
}

struct Prefix {
  std::int64_t tid = 0;
  std::optional<double> ts;
  std::string_view body;
};

Prefix split_prefix(std::string_view s) {
  Prefix p;
  if (starts_with(s, "[pid")) {
    auto close = s.find(']');
    if (close != std::string_view::npos) {
      if (auto v = parse_int(trim(s.substr(4, close - 4)))) p.tid = *v;
      s = trim(s.substr(close + 1));
    }
  } else {
    std::size_t i = 0;
    while (i < s.size() && is_digit(s[i])) ++i;
    if (i > 0 && i < s.size() && is_space(s[i])) {
      p.tid = *parse_int(s.substr(0, i));
      s = trim(s.substr(i));
    }
  }
  std::size_t i = 0;
  while (i < s.size() && !is_space(s[i])) ++i;
  if (i < s.size() && looks_like_timestamp(s.substr(0, i))) {
    p.ts = parse_timestamp(s.substr(0, i));
    s = trim(s.substr(i));
  }
  p.body = s;
  return p;
}

SyscallEvent parse_call(std::string_view body, std::int64_t tid, std::optional<double> ts,
                        std::size_t line_no, std::string_view file) {
  auto open = body.find('(');
  if (open == std::string_view::npos || open == 0) {
    throw MalformedLine(std::string(file), line_no, "no system call found");
  }
  auto name = body.substr(0, open);
  if (!std::all_of(name.begin(), name.end(), [](char c) { return is_ident(c) || c == '?'; })) {
    throw MalformedLine(std::string(file), line_no, "bad system call name '" + std::string(name) + "'");
  }
  auto close = find_close_paren(body, open);
  if (!close) throw MalformedLine(std::string(file), line_no, "unterminated argument list");
  SyscallEvent ev;
  ev.tid = tid;
  ev.ts = ts;
  ev.name = std::string(name);
  ev.args = parse_args(body.substr(open + 1, *close - open - 1));
  parse_return(body.substr(*close + 1), ev, line_no, file);
  return ev;
}

}  // namespace

std::string_view to_string(ArgKind kind) {
  switch (kind) {
    case ArgKind::String: return "str";
    case ArgKind::Integer: return "int";
    case ArgKind::Fd: return "fd";
    case ArgKind::Flags: return "flags";
    case ArgKind::Struct: return "struct";
    case ArgKind::Array: return "array";
    case ArgKind::Other: return "other";
  }
  return "other";
}

std::optional<ArgKind> arg_kind_from_string(std::string_view s) {
  for (auto k : {ArgKind::String, ArgKind::Integer, ArgKind::Fd, ArgKind::Flags, ArgKind::Struct,
                 ArgKind::Array, ArgKind::Other}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

std::string unescape(std::string_view body) {
  std::string out;
  out.reserve(body.size());
  for (std::size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (c != '\\' || i + 1 >= body.size()) {
      out += c;
      continue;
    }
    char n = body[++i];
    switch (n) {
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case 'r': out += '\r'; break;
      case 'v': out += '\v'; break;
      case 'f': out += '\f'; break;
      case 'a': out += '\a'; break;
      case 'b': out += '\b'; break;
      case 'x': {
        unsigned v = 0;
        int digits = 0;
        while (digits < 2 && i + 1 < body.size() &&
               std::isxdigit(static_cast<unsigned char>(body[i + 1]))) {
          char h = body[++i];
          v = v * 16 + static_cast<unsigned>(is_digit(h) ? h - '0' : (std::tolower(h) - 'a' + 10));
          ++digits;
        }
        out += static_cast<char>(v);
        break;
      }
      default:
        if (n >= '0' && n <= '7') {
          unsigned v = static_cast<unsigned>(n - '0');
          int digits = 1;
          while (digits < 3 && i + 1 < body.size() && body[i + 1] >= '0' && body[i + 1] <= '7') {
            v = v * 8 + static_cast<unsigned>(body[++i] - '0');
            ++digits;
          }
          out += static_cast<char>(v);
        } else {
          out += n;
        }
    }
  }
  return out;
}

std::vector<Arg> parse_args(std::string_view text) {
  std::vector<Arg> out;
  Scanner sc{text, 0, 0};
  std::string tok;
  auto flush = [&] {
    auto t = trim(tok);
    if (!t.empty()) out.push_back(classify(t));
    tok.clear();
  };
  while (sc.i < text.size()) {
    char c = text[sc.i];
    std::size_t start = sc.i;
    if (c == '"') {
      sc.skip_quoted();
      tok.append(text.substr(start, sc.i - start));
    } else if (sc.annotation_at(sc.i)) {
      sc.skip_annotation();
      tok.append(text.substr(start, sc.i - start));
    } else if (sc.at_comment()) {
      sc.skip_comment();
    } else if (c == ',' && sc.depth == 0) {
      flush();
      ++sc.i;
    } else {
      if (c == '(' || c == '[' || c == '{') ++sc.depth;
      if (c == ')' || c == ']' || c == '}') --sc.depth;
      tok += c;
      ++sc.i;
    }
  }
  flush();
  return out;
}

ParsedLine parse_strace_line(std::string_view line, std::size_t line_no, std::string_view file) {
  auto s = trim(line);
  if (s.empty() || starts_with(s, "strace:")) return Noise{};
  auto pre = split_prefix(s);
  auto body = pre.body;
  if (starts_with(body, "---") || starts_with(body, "+++") || starts_with(body, "strace:")) {
    return Noise{};
  }
  if (starts_with(body, "<... ")) {
    auto mark = body.find(" resumed>");
    if (mark == std::string_view::npos) {
      throw MalformedLine(std::string(file), line_no, "resumption without 'resumed>' marker");
    }
    Continuation c;
    c.tid = pre.tid;
    c.ts = pre.ts;
    c.name = std::string(trim(body.substr(5, mark - 5)));
    c.resumed = true;
    c.fragment = std::string(body.substr(mark + 9));
    return c;
  }
  if (ends_with(body, kUnfinished)) {
    auto open = body.find('(');
    if (open == std::string_view::npos || open == 0) {
      throw MalformedLine(std::string(file), line_no, "unfinished call without argument list");
    }
    Continuation c;
    c.tid = pre.tid;
    c.ts = pre.ts;
    c.name = std::string(body.substr(0, open));
    c.fragment = std::string(body.substr(open + 1, body.size() - kUnfinished.size() - open - 1));
    return c;
  }
  return parse_call(body, pre.tid, pre.ts, line_no, file);
}

Log parse_strace_text(std::string_view text, std::string_view source, const LoadOptions& opts,
                      LoadReport* report) {
  struct Pending {
    std::size_t slot;
    std::string name;
    std::string fragment;
    std::optional<double> ts;
    std::size_t line_no;
  };
  std::vector<std::optional<SyscallEvent>> slots;
  std::map<std::int64_t, Pending> pending;
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  auto warn = [&](std::size_t line_no, const std::string& msg) {
    rep.warnings.push_back(std::string(source) + ":" + std::to_string(line_no) + ": " + msg);
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (nl == std::string_view::npos && line.empty()) break;
    ++rep.lines;
    ParsedLine parsed;
    try {
      parsed = parse_strace_line(line, line_no, source);
    } catch (const MalformedLine& e) {
      if (opts.strict) throw;
      ++rep.malformed;
      rep.warnings.push_back(e.what());
      continue;
    }
    if (std::holds_alternative<Noise>(parsed)) {
      ++rep.noise;
      continue;
    }
    if (auto* ev = std::get_if<SyscallEvent>(&parsed)) {
      slots.emplace_back(std::move(*ev));
      continue;
    }
    auto& c = std::get<Continuation>(parsed);
    if (!c.resumed) {
      if (auto it = pending.find(c.tid); it != pending.end()) {
        warn(it->second.line_no, "unfinished '" + it->second.name + "' never resumed");
        ++rep.unpaired;
      }
      pending[c.tid] = Pending{slots.size(), c.name, c.fragment, c.ts, line_no};
      slots.emplace_back(std::nullopt);
      continue;
    }
    auto it = pending.find(c.tid);
    if (it == pending.end() || it->second.name != c.name) {
      warn(line_no, "resumed '" + c.name + "' with no unfinished call; dropped");
      ++rep.unpaired;
      continue;
    }
    std::string joined = it->second.name + "(" + it->second.fragment + c.fragment;
    try {
      slots[it->second.slot] = parse_call(joined, c.tid, it->second.ts, line_no, source);
    } catch (const MalformedLine& e) {
      if (opts.strict) throw;
      ++rep.malformed;
      rep.warnings.push_back(e.what());
    }
    pending.erase(it);
  }
  for (const auto& [tid, p] : pending) {
    warn(p.line_no, "unfinished '" + p.name + "' never resumed");
    ++rep.unpaired;
  }
  Log log;
  log.reserve(slots.size());
  for (auto& s : slots) {
    if (s) log.push_back(std::move(*s));
  }
  rep.events += log.size();
  return log;
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open trace file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorKind::Io, "error reading trace file: " + path);
  return std::move(ss).str();
}

}  // namespace

ExecutionLog load_execution_log(const std::vector<std::string>& paths, const LoadOptions& opts,
                                LoadReport* report) {
  std::vector<std::future<std::pair<Log, LoadReport>>> jobs;
  jobs.reserve(paths.size());
  for (const auto& p : paths) {
    jobs.push_back(std::async(std::launch::async, [p, opts] {
      auto text = read_file(p);
      LoadReport rep;
      auto fmt = opts.format;
      if (fmt == Format::Auto) {
        fmt = starts_with(text, kCanonicalHeader) ? Format::Canonical : Format::StraceText;
      }
      Log log;
      if (fmt == Format::Canonical) {
        log = read_canonical(text, p);
        rep.events = log.size();
      } else {
        log = parse_strace_text(text, p, opts, &rep);
      }
      return std::make_pair(std::move(log), std::move(rep));
    }));
  }
  ExecutionLog el;
  for (auto& j : jobs) {
    auto [log, rep] = j.get();
    el.logs.push_back(std::move(log));
    if (report) {
      report->lines += rep.lines;
      report->events += rep.events;
      report->noise += rep.noise;
      report->malformed += rep.malformed;
      report->unpaired += rep.unpaired;
      for (auto& w : rep.warnings) report->warnings.push_back(std::move(w));
    }
  }
  return el;
}

// Canonical format ---------------------------------------------------------
//
//   #slimpart-trace v1
//   <tid> TAB <ts|-> TAB <name> TAB <ret>[@<annotation>] TAB <err|-> [TAB <kind>:<value>[@<annotation>]]...
//
// Field bytes '%', '@', TAB, LF, CR and other control bytes are written as %HH.

namespace {

std::string escape_field(std::string_view s) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    if (c == '%' || c == '@' || c < 0x20 || c == 0x7f) {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 0xf];
    } else {
      out += static_cast<char>(c);
    }
  }
  return out;
}

std::optional<std::string> unescape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '%') {
      out += s[i];
      continue;
    }
    if (i + 2 >= s.size()) return std::nullopt;
    unsigned v = 0;
    auto [p, ec] = std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
    if (ec != std::errc() || p != s.data() + i + 3) return std::nullopt;
    out += static_cast<char>(v);
    i += 2;
  }
  return out;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto t = line.find('\t', start);
    out.push_back(line.substr(start, t == std::string_view::npos ? line.npos : t - start));
    if (t == std::string_view::npos) break;
    start = t + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

void write_canonical(std::ostream& out, const Log& log) {
  out << kCanonicalHeader << '\n';
  for (const auto& ev : log) {
    out << ev.tid << '\t' << (ev.ts ? format_double(*ev.ts) : std::string("-")) << '\t'
        << escape_field(ev.name) << '\t' << ev.ret;
    if (ev.ret_annotation) out << '@' << escape_field(*ev.ret_annotation);
    out << '\t' << (ev.err ? escape_field(*ev.err) : std::string("-"));
    for (const auto& a : ev.args) {
      out << '\t' << to_string(a.kind) << ':' << escape_field(a.text);
      if (a.annotation) out << '@' << escape_field(*a.annotation);
    }
    out << '\n';
  }
}

Log read_canonical(std::string_view text, std::string_view source) {
  Log log;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto bad = [&](const std::string& why) { return MalformedLine(std::string(source), line_no, why); };
  auto split_at = [](std::string_view s) -> std::pair<std::string_view, std::optional<std::string_view>> {
    auto at = s.find('@');
    if (at == std::string_view::npos) return {s, std::nullopt};
    return {s.substr(0, at), s.substr(at + 1)};
  };
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != kCanonicalHeader) throw bad("missing or unsupported canonical header");
      continue;
    }
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() < 5) throw bad("expected at least 5 fields");
    SyscallEvent ev;
    auto tid = parse_int(f[0]);
    if (!tid) throw bad("bad tid");
    ev.tid = *tid;
    if (f[1] != "-") {
      double v = 0;
      auto [p, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), v);
      if (ec != std::errc() || p != f[1].data() + f[1].size()) throw bad("bad timestamp");
      ev.ts = v;
    }
    auto name = unescape_field(f[2]);
    if (!name || name->empty()) throw bad("bad name");
    ev.name = std::move(*name);
    auto [ret_s, ret_ann] = split_at(f[3]);
    auto ret = parse_int(ret_s);
    if (!ret) throw bad("bad return value");
    ev.ret = *ret;
    if (ret_ann) {
      auto a = unescape_field(*ret_ann);
      if (!a) throw bad("bad return annotation");
      ev.ret_annotation = std::move(*a);
    }
    if (f[4] != "-") {
      auto e = unescape_field(f[4]);
      if (!e) throw bad("bad error symbol");
      ev.err = std::move(*e);
    }
    if ((ev.ret < 0) != ev.err.has_value()) throw bad("err must be present iff ret < 0");
    for (std::size_t i = 5; i < f.size(); ++i) {
      auto colon = f[i].find(':');
      if (colon == std::string_view::npos) throw bad("argument without kind");
      auto kind = arg_kind_from_string(f[i].substr(0, colon));
      if (!kind) throw bad("unknown argument kind");
      auto [val, ann] = split_at(f[i].substr(colon + 1));
      Arg a;
      a.kind = *kind;
      auto v = unescape_field(val);
      if (!v) throw bad("bad argument escape");
      a.text = std::move(*v);
      if (ann) {
        auto av = unescape_field(*ann);
        if (!av) throw bad("bad annotation escape");
        a.annotation = std::move(*av);
      }
      ev.args.push_back(std::move(a));
    }
    log.push_back(std::move(ev));
  }
  if (line_no == 0) throw bad("empty canonical trace (header required)");
  return log;
}

}  // namespace slimpart::trace
