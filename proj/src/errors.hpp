#pragma once

#include <stdexcept>
#include <string>

namespace bfem {

enum class ErrorCode {
  invalid_argument,
  family_mismatch,
  not_normalizable,
  degenerate_projection,
  intractable,
  too_large,
  parse,
  io,
  unknown_solver,
};

// Single exception type for the whole core; the code survives the trip
// through the C boundary, the message is for humans.
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

}  // namespace bfem
