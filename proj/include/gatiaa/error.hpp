#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gatiaa {

enum class ErrorKind {
  shape,
  value,
  format,
  io,
  config,
};

// Base of every error raised by the library. `kind()` lets callers (the CLI
// in particular) map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream oss;
  oss << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ',';
    oss << shape[i];
  }
  oss << ')';
  return oss.str();
}

class ShapeError : public Error {
 public:
  ShapeError(std::string op, std::vector<std::size_t> lhs, std::vector<std::size_t> rhs)
      : Error(ErrorKind::shape,
              op + ": incompatible shapes " + shape_string(lhs) + " and " + shape_string(rhs)),
        op_(std::move(op)),
        lhs_(std::move(lhs)),
        rhs_(std::move(rhs)) {}
  ShapeError(std::string op, const std::string& detail)
      : Error(ErrorKind::shape, op + ": " + detail), op_(std::move(op)) {}

  const std::string& op() const noexcept { return op_; }
  const std::vector<std::size_t>& lhs() const noexcept { return lhs_; }
  const std::vector<std::size_t>& rhs() const noexcept { return rhs_; }

 private:
  std::string op_;
  std::vector<std::size_t> lhs_;
  std::vector<std::size_t> rhs_;
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& what) : Error(ErrorKind::value, what) {}
};

// Malformed binary input. `offset()` is the byte position where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::format, what + " (at byte offset " + std::to_string(offset) + ")"),
        detail_(what),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::size_t offset_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(ErrorKind::config, key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace gatiaa
