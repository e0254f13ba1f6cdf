#pragma once

#include <string>
#include <string_view>
#include <vector>

// Lexical helpers over byte-string paths. Nothing here touches the filesystem.
namespace slimpart::path {

bool is_absolute(std::string_view p);

// Collapses "//", "." and ".." lexically. ".." at the root stays at the root.
// Relative inputs stay relative (leading ".." components are kept).
std::string normalize(std::string_view p);

// Joins `rel` onto `base` and normalizes; an absolute `rel` ignores `base`.
std::string join(std::string_view base, std::string_view rel);

// "/a/b" -> "/a", "/a" -> "/", "/" -> "/".
std::string parent(std::string_view p);

// True when `p` equals `dir` or lies below it.
bool is_within(std::string_view p, std::string_view dir);

// Proper ancestors of an absolute path, outermost first, root excluded.
std::vector<std::string> ancestors(std::string_view p);

std::vector<std::string> components(std::string_view p);

}  // namespace slimpart::path
