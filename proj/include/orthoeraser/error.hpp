#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace orthoeraser {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kEmptyInput,
  kOutOfRange,
  kMalformedFile,
  kVersionMismatch,
  kDimensionInconsistency,
  kSingularGram,
  kNonFiniteLoss,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's exit status) can branch on the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kOutOfRange: return "out-of-range";
    case ErrorCode::kMalformedFile: return "malformed-file";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kDimensionInconsistency: return "dimension-inconsistency";
    case ErrorCode::kSingularGram: return "singular-gram";
    case ErrorCode::kNonFiniteLoss: return "non-finite-loss";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

/// The message is only copied on failure, so checks on allocation-free paths
/// must pass literals rather than built strings.
inline void require(bool condition, ErrorCode code, std::string_view message) {
  if (!condition) fail(code, std::string(message));
}

}  // namespace orthoeraser
