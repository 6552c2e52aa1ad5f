#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfwgf {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kNonFinite,
  kUnsupported,
  kCapacityExceeded,
  kNotConverged,
  kDegenerate,
  kIo,
  kConfig,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kCapacityExceeded: return "capacity-exceeded";
    case ErrorCode::kNotConverged: return "not-converged";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

/// Exception carrying a machine-readable code and, where it applies, the
/// indices (observation, class, particle, iteration, ...) that triggered it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::vector<std::int64_t> where = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        where_(std::move(where)) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }
  [[nodiscard]] const std::vector<std::int64_t>& where() const noexcept { return where_; }

 private:
  ErrorCode code_;
  std::vector<std::int64_t> where_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message,
                              std::vector<std::int64_t> where = {}) {
  throw Error(code, message, std::move(where));
}

inline void require(bool ok, ErrorCode code, const std::string& message) {
  if (!ok) fail(code, message);
}

}  // namespace mfwgf
