#include "slimpart/document.hpp"

#include <fstream>
#include <sstream>

#include "json_io.hpp"
#include "slimpart/error.hpp"

namespace slimpart::document {

using nlohmann::json;
using rsrc::NetAddress;
using rsrc::Resource;

namespace {

// Length of the valid UTF-8 sequence starting at s[i], or 0.
std::size_t utf8_len(std::string_view s, std::size_t i) {
  auto b = static_cast<unsigned char>(s[i]);
  std::size_t n;
  std::uint32_t cp;
  if (b < 0x80) return 1;
  if ((b & 0xE0) == 0xC0) n = 2, cp = b & 0x1F;
  else if ((b & 0xF0) == 0xE0) n = 3, cp = b & 0x0F;
  else if ((b & 0xF8) == 0xF0) n = 4, cp = b & 0x07;
  else return 0;
  if (i + n > s.size()) return 0;
  for (std::size_t k = 1; k < n; ++k) {
    auto c = static_cast<unsigned char>(s[i + k]);
    if ((c & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (c & 0x3F);
  }
  static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[n] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  return n;
}

}  // namespace

namespace detail {

json bytes(std::string_view s) { return escape_bytes(s); }

std::string text(const json& j) { return unescape_bytes(j.get<std::string>()); }

json to_json(const NetAddress& a) { return {{"protocol", a.protocol}, {"host", a.host}, {"port", a.port}}; }

NetAddress net_from(const json& j) {
  return {j.at("protocol").get<std::string>(), j.at("host").get<std::string>(), j.at("port").get<std::uint16_t>()};
}

json to_json(const Resource& r) {
  json j{{"kind", std::string(rsrc::to_string(r.kind))}};
  if (r.is_path()) j["path"] = bytes(r.path);
  else j["net"] = to_json(r.net);
  return j;
}

Resource resource_from(const json& j) {
  auto kind = rsrc::resource_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorKind::Io, "unknown resource kind: " + j.at("kind").get<std::string>());
  Resource r;
  r.kind = *kind;
  if (r.is_path()) r.path = text(j.at("path"));
  else r.net = net_from(j.at("net"));
  return r;
}

json to_json(const rsrc::ResourceSet& s) {
  json a = json::array();
  for (const auto& r : s) a.push_back(to_json(r));
  return a;
}

rsrc::ResourceSet set_from(const json& j) {
  rsrc::ResourceSet s;
  for (const auto& e : j) s.insert(resource_from(e));
  return s;
}

std::vector<std::string> strings_from(const json& j) {
  std::vector<std::string> out;
  for (const auto& e : j) out.push_back(text(e));
  return out;
}

json to_json(const placement::FileMeta& m) {
  json j{{"type", std::string(placement::to_string(m.type))},
         {"mode", m.mode},
         {"uid", m.uid},
         {"gid", m.gid},
         {"mtime", {m.mtime_sec, m.mtime_nsec}},
         {"size", m.size}};
  if (m.link_target) j["target"] = bytes(*m.link_target);
  return j;
}

placement::FileMeta meta_from(const json& j) {
  placement::FileMeta m;
  auto t = placement::file_type_from_string(j.at("type").get<std::string>());
  if (!t) throw Error(ErrorKind::Io, "unknown file type: " + j.at("type").get<std::string>());
  m.type = *t;
  m.mode = j.at("mode").get<std::uint32_t>();
  m.uid = j.at("uid").get<std::uint32_t>();
  m.gid = j.at("gid").get<std::uint32_t>();
  m.mtime_sec = j.at("mtime").at(0).get<std::int64_t>();
  m.mtime_nsec = j.at("mtime").at(1).get<std::int64_t>();
  m.size = j.at("size").get<std::uint64_t>();
  if (j.contains("target")) m.link_target = text(j.at("target"));
  return m;
}

}  // namespace detail

using namespace detail;

namespace {

json placed_to_json(const placement::PlacedFile& f) {
  json j = to_json(f.meta);
  j["path"] = bytes(f.path);
  j["role"] = std::string(placement::to_string(f.role));
  return j;
}

placement::PlacedFile placed_from(const json& j) {
  placement::PlacedFile f;
  f.path = text(j.at("path"));
  f.meta = meta_from(j);
  auto r = placement::role_from_string(j.at("role").get<std::string>());
  if (!r) throw Error(ErrorKind::Io, "unknown role: " + j.at("role").get<std::string>());
  f.role = *r;
  return f;
}

json parse_json(std::string_view textv, const char* what) {
  try {
    return json::parse(textv);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("invalid ") + what + " document: " + e.what());
  }
}

void check_version(const json& j, const char* kind, int version) {
  if (j.value("document", "") != kind) throw Error(ErrorKind::Io, std::string("not a ") + kind + " document");
  if (j.value("version", 0) != version) {
    throw Error(ErrorKind::Io, std::string("unsupported ") + kind + " document version");
  }
}

}  // namespace

std::string escape_bytes(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    std::size_t n = s[i] == '%' ? 0 : utf8_len(s, i);
    if (n == 0) {
      auto b = static_cast<unsigned char>(s[i]);
      out += '%';
      out += kHex[b >> 4];
      out += kHex[b & 0xF];
      ++i;
    } else {
      out.append(s.substr(i, n));
      i += n;
    }
  }
  return out;
}

std::string unescape_bytes(std::string_view s) {
  auto hex = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
  };
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size() && hex(s[i + 1]) >= 0 && hex(s[i + 2]) >= 0) {
      out += static_cast<char>(hex(s[i + 1]) * 16 + hex(s[i + 2]));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

std::string dump_analysis(const attribution::Analysis& a) {
  json profiles = json::array();
  for (const auto& [exe, p] : a.profiles) {
    profiles.push_back({{"exe", bytes(exe)}, {"reads", to_json(p.reads)}, {"writes", to_json(p.writes)}});
  }
  json edges = json::array();
  for (const auto& [e, n] : a.graph.edges) edges.push_back({{"from", bytes(e.first)}, {"to", bytes(e.second)}, {"count", n}});
  json procs = json::array();
  for (const auto& p : a.processes) {
    procs.push_back({{"log", p.log}, {"tid", p.tid}, {"parent", p.parent}, {"exes", string_list(p.exes)}});
  }
  json unhandled = json::object();
  for (const auto& [name, n] : a.diagnostics.unhandled) unhandled[name] = n;
  json j{{"document", "slimpart-analysis"},
         {"version", kAnalysisVersion},
         {"executables", string_list(a.graph.nodes)},
         {"profiles", profiles},
         {"edges", edges},
         {"processes", procs},
         {"unattributed", {{"reads", to_json(a.unattributed.reads)}, {"writes", to_json(a.unattributed.writes)}}},
         {"deleted", string_list(a.deleted)},
         {"entry", {{"exe", bytes(a.entry_exe)}, {"argv", string_list(a.entry_argv)}}},
         {"diagnostics",
          {{"unknown_tids", a.diagnostics.unknown_tids},
           {"unresolvable_dirfd", a.diagnostics.unresolvable_dirfd},
           {"unhandled", unhandled},
           {"warnings", string_list(a.diagnostics.warnings)}}}};
  return j.dump(1) + "\n";
}

attribution::Analysis parse_analysis(std::string_view textv) {
  json j = parse_json(textv, "analysis");
  check_version(j, "slimpart-analysis", kAnalysisVersion);
  attribution::Analysis a;
  try {
    for (const auto& e : j.at("executables")) a.graph.nodes.insert(text(e));
    for (const auto& p : j.at("profiles")) {
      auto exe = text(p.at("exe"));
      a.profiles[exe] = {exe, set_from(p.at("reads")), set_from(p.at("writes"))};
    }
    for (const auto& e : j.at("edges")) {
      a.graph.edges[{text(e.at("from")), text(e.at("to"))}] = e.at("count").get<std::size_t>();
    }
    for (const auto& p : j.at("processes")) {
      a.processes.push_back({p.at("log").get<std::size_t>(), p.at("tid").get<std::int64_t>(),
                             p.at("parent").get<std::int64_t>(), strings_from(p.at("exes"))});
    }
    a.unattributed.reads = set_from(j.at("unattributed").at("reads"));
    a.unattributed.writes = set_from(j.at("unattributed").at("writes"));
    for (const auto& d : j.at("deleted")) a.deleted.insert(text(d));
    a.entry_exe = text(j.at("entry").at("exe"));
    a.entry_argv = strings_from(j.at("entry").at("argv"));
    const auto& d = j.at("diagnostics");
    a.diagnostics.unknown_tids = d.at("unknown_tids").get<std::size_t>();
    a.diagnostics.unresolvable_dirfd = d.at("unresolvable_dirfd").get<std::size_t>();
    for (const auto& [name, n] : d.at("unhandled").items()) a.diagnostics.unhandled[name] = n.get<std::size_t>();
    a.diagnostics.warnings = strings_from(d.at("warnings"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed analysis document: ") + e.what());
  }
  return a;
}

std::string dump_plan(const placement::PlacementPlan& p) {
  json containers = json::array();
  for (const auto& c : p.containers) {
    json files = json::array();
    for (const auto& f : c.files) files.push_back(placed_to_json(f));
    json vols = json::array();
    for (const auto& v : c.volumes) vols.push_back({{"key", v.key}, {"mount", bytes(v.mount)}});
    json stubs = json::array();
    for (const auto& s : c.stubs) {
      stubs.push_back({{"path", bytes(s.path)}, {"target", s.target}, {"target_name", s.target_name},
                       {"socket", bytes(s.socket)}});
    }
    json net = json::array();
    for (const auto& a : c.net) net.push_back(to_json(a));
    containers.push_back({{"index", c.index},
                          {"name", c.name},
                          {"exes", string_list(c.exes)},
                          {"files", files},
                          {"volumes", vols},
                          {"stubs", stubs},
                          {"net", net},
                          {"shared_net", c.shared_net},
                          {"rpe_server", c.rpe_server},
                          {"reads", c.reads},
                          {"writes", c.writes},
                          {"resources", c.resources}});
  }
  json volumes = json::array();
  for (const auto& v : p.volumes) {
    json files = json::array();
    for (const auto& f : v.files) files.push_back(placed_to_json(f));
    json jv{{"key", v.key}, {"mount", bytes(v.mount)}, {"containers", v.containers}, {"files", files}};
    if (v.root_meta) jv["root"] = to_json(*v.root_meta);
    volumes.push_back(std::move(jv));
  }
  json matches = json::array();
  for (const auto& m : p.net_matches) {
    matches.push_back({{"bound", to_json(m.bound)},
                       {"bound_container", m.bound_container},
                       {"peer", to_json(m.peer)},
                       {"peer_container", m.peer_container}});
  }
  json j{{"document", "slimpart-plan"},
         {"version", p.version},
         {"containers", containers},
         {"volumes", volumes},
         {"shared_net", p.shared_net},
         {"net_matches", matches},
         {"entry", {{"exe", bytes(p.entry_exe)}, {"argv", string_list(p.entry_argv)}, {"container", p.entry_container}}},
         {"skipped", string_list(p.skipped)},
         {"warnings", string_list(p.warnings)}};
  return j.dump(1) + "\n";
}

placement::PlacementPlan parse_plan(std::string_view textv) {
  json j = parse_json(textv, "plan");
  check_version(j, "slimpart-plan", placement::kPlanVersion);
  placement::PlacementPlan p;
  try {
    for (const auto& jc : j.at("containers")) {
      placement::ContainerPlan c;
      c.index = jc.at("index").get<int>();
      c.name = jc.at("name").get<std::string>();
      c.exes = strings_from(jc.at("exes"));
      for (const auto& f : jc.at("files")) c.files.push_back(placed_from(f));
      for (const auto& v : jc.at("volumes")) c.volumes.push_back({v.at("key").get<std::string>(), text(v.at("mount"))});
      for (const auto& s : jc.at("stubs")) {
        c.stubs.push_back({text(s.at("path")), s.at("target").get<int>(), s.at("target_name").get<std::string>(),
                           text(s.at("socket"))});
      }
      for (const auto& a : jc.at("net")) c.net.push_back(net_from(a));
      c.shared_net = jc.at("shared_net").get<bool>();
      c.rpe_server = jc.at("rpe_server").get<bool>();
      c.reads = jc.at("reads").get<std::size_t>();
      c.writes = jc.at("writes").get<std::size_t>();
      c.resources = jc.at("resources").get<std::size_t>();
      p.containers.push_back(std::move(c));
    }
    for (const auto& jv : j.at("volumes")) {
      placement::SharedVolume v;
      v.key = jv.at("key").get<std::string>();
      v.mount = text(jv.at("mount"));
      v.containers = jv.at("containers").get<std::vector<int>>();
      for (const auto& f : jv.at("files")) v.files.push_back(placed_from(f));
      if (jv.contains("root")) v.root_meta = meta_from(jv.at("root"));
      p.volumes.push_back(std::move(v));
    }
    p.shared_net = j.at("shared_net").get<bool>();
    for (const auto& m : j.at("net_matches")) {
      p.net_matches.push_back({net_from(m.at("bound")), m.at("bound_container").get<int>(), net_from(m.at("peer")),
                               m.at("peer_container").get<int>()});
    }
    p.entry_exe = text(j.at("entry").at("exe"));
    p.entry_argv = strings_from(j.at("entry").at("argv"));
    p.entry_container = j.at("entry").at("container").get<int>();
    p.skipped = strings_from(j.at("skipped"));
    p.warnings = strings_from(j.at("warnings"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed plan document: ") + e.what());
  }
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path);
}

}  // namespace slimpart::document
