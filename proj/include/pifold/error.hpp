#pragma once

#include <stdexcept>
#include <string>

namespace pifold {

// Categories map onto CLI exit codes (see tools/pifold.cpp).
enum class ErrorKind {
  kInvalidArgument,
  kNotFound,
  kData,
  kNumeric,
  kState,
};

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

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::kInvalidArgument, what);
}

}  // namespace pifold
