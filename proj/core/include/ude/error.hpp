#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ude {

enum class ErrorCode {
  InvalidArgument,
  IndexOutOfRange,
  SeriesTooShort,
  PatchLargerThanMatrix,
  DimensionMismatch,
  NonFinite,
  NoRetainedForward,
  AttentionNotRetained,
  CloudTooLarge,
  TooFewChannels,
  MissingStats,
  Parse,
  Io,
  Divergence,
  EigenSolver,
  Internal,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Error raised by every ude operation. The code is stable and machine
/// readable; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// True for violations of an internal invariant rather than bad input.
  bool internal() const noexcept {
    return code_ == ErrorCode::Internal || code_ == ErrorCode::EigenSolver;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace ude
