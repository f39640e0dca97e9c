#pragma once

#include <stdexcept>
#include <string>

namespace mmx {

enum class ErrorCode {
  invalid_argument,
  invalid_config,
  shape_mismatch,
  io_error,
  corrupt_record,
  incompatible_schema,
  version_mismatch,
  truncated,
  non_finite,
  fingerprint_mismatch,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::corrupt_record: return "corrupt_record";
    case ErrorCode::incompatible_schema: return "incompatible_schema";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::fingerprint_mismatch: return "fingerprint_mismatch";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

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

}  // namespace mmx
