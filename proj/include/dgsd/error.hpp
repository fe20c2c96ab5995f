#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dgsd {

/// Coarse failure category. The CLI prints it as `error[<name>]: ...` so
/// scripts can dispatch on it.
enum class ErrorKind {
  InvalidArgument,
  Dimension,
  Numeric,
  Io,
  Format,
  UnsupportedVersion,
  Truncated,
  EmptyOutput,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::UnsupportedVersion: return "unsupported-version";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::EmptyOutput: return "empty-output";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace dgsd
