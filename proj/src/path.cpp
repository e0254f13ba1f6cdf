#include "slimpart/path.hpp"

namespace slimpart::path {

bool is_absolute(std::string_view p) { return !p.empty() && p.front() == '/'; }

std::vector<std::string> components(std::string_view p) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < p.size()) {
    while (i < p.size() && p[i] == '/') ++i;
    std::size_t j = i;
    while (j < p.size() && p[j] != '/') ++j;
    if (j > i) out.emplace_back(p.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string normalize(std::string_view p) {
  const bool absolute = is_absolute(p);
  std::vector<std::string> stack;
  for (auto& c : components(p)) {
    if (c == ".") continue;
    if (c == "..") {
      if (!stack.empty() && stack.back() != "..") {
        stack.pop_back();
      } else if (!absolute) {
        stack.push_back("..");
      }
      continue;
    }
    stack.push_back(std::move(c));
  }
  std::string out;
  if (absolute) out = "/";
  for (std::size_t i = 0; i < stack.size(); ++i) {
    if (i > 0) out += '/';
    out += stack[i];
  }
  if (out.empty()) out = ".";
  return out;
}

std::string join(std::string_view base, std::string_view rel) {
  if (is_absolute(rel)) return normalize(rel);
  std::string s(base);
  s += '/';
  s += rel;
  return normalize(s);
}

std::string parent(std::string_view p) {
  auto n = normalize(p);
  auto pos = n.rfind('/');
  if (pos == std::string::npos) return ".";
  if (pos == 0) return "/";
  return n.substr(0, pos);
}

bool is_within(std::string_view p, std::string_view dir) {
  if (dir == "/") return is_absolute(p);
  if (p.size() < dir.size() || p.substr(0, dir.size()) != dir) return false;
  return p.size() == dir.size() || p[dir.size()] == '/';
}

std::vector<std::string> ancestors(std::string_view p) {
  std::vector<std::string> out;
  std::string cur;
  auto comps = components(p);
  if (comps.empty()) return out;
  for (std::size_t i = 0; i + 1 < comps.size(); ++i) {
    cur += '/';
    cur += comps[i];
    out.push_back(cur);
  }
  return out;
}

}  // namespace slimpart::path
