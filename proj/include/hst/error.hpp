#pragma once

#include <stdexcept>
#include <string>

namespace hst {

enum class ErrorKind {
  InvalidArgument,  // caller violated a precondition
  Shape,            // tensor shape mismatch
  Numeric,          // degenerate geometry, isolated node, non-finite value
  Format,           // malformed or truncated file
  Io,               // file could not be opened or written
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::InvalidArgument, what);
}

}  // namespace hst
