#pragma once

#include <stdexcept>
#include <string>

namespace slmicl {

enum class ErrorCode {
  invalid_argument,
  config,
  io,
  bad_magic,
  version_mismatch,
  truncated_file,
  invariant,
};

/// Single exception type for the library; `code()` lets callers (and the CLI
/// exit-code mapping) distinguish failure classes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::invalid_argument, what);
}

}  // namespace slmicl
