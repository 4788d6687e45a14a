// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dppnet {

enum class ErrorCode {
  InvalidArgument = 1,
  ShapeMismatch = 2,
  Io = 3,
  Format = 4,
  Config = 5,
  Numeric = 6,
  Internal = 99,
};

const char* error_code_name(ErrorCode code) noexcept;

/// Every failure raised by the library. The C API maps `code()` onto its
/// status values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace dppnet
