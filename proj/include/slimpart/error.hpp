#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace slimpart {

enum class ErrorKind {
  MalformedLine,
  Io,
  Precondition,
  Policy,
  MissingSourceFile,
  Protocol,
  Invariant,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class MalformedLine : public Error {
 public:
  MalformedLine(std::string file, std::size_t line, const std::string& why)
      : Error(ErrorKind::MalformedLine, file + ":" + std::to_string(line) + ": " + why),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

class MissingSourceFile : public Error {
 public:
  explicit MissingSourceFile(std::vector<std::string> paths)
      : Error(ErrorKind::MissingSourceFile, describe(paths)), paths_(std::move(paths)) {}

  const std::vector<std::string>& paths() const noexcept { return paths_; }

 private:
  static std::string describe(const std::vector<std::string>& paths) {
    std::string s = "missing source file(s):";
    for (const auto& p : paths) {
      s += ' ';
      s += p;
    }
    return s;
  }

  std::vector<std::string> paths_;
};

}  // namespace slimpart
