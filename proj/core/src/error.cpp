#include "ude/error.hpp"

namespace ude {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::IndexOutOfRange: return "index-out-of-range";
    case ErrorCode::SeriesTooShort: return "series-too-short";
    case ErrorCode::PatchLargerThanMatrix: return "patch-larger-than-matrix";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::NoRetainedForward: return "no-retained-forward";
    case ErrorCode::AttentionNotRetained: return "attention-not-retained";
    case ErrorCode::CloudTooLarge: return "cloud-too-large";
    case ErrorCode::TooFewChannels: return "too-few-channels";
    case ErrorCode::MissingStats: return "missing-stats";
    case ErrorCode::Parse: return "parse-error";
    case ErrorCode::Io: return "io-error";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::EigenSolver: return "eigen-solver";
    case ErrorCode::Internal: return "internal";
  }
  return "unknown";
}

}  // namespace ude
