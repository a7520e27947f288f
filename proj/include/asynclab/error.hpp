#pragma once

#include <stdexcept>
#include <string>

namespace asynclab {

enum class ErrorCode {
  kNonDescendingSpectrum,
  kNotOrthogonal,
  kInvalidArgument,
  kDelayExceedsCap,
  kStepTooLarge,
  kIndexIsLeading,
  kGammaOutOfRange,
  kProbabilityOutOfRange,
  kNeedsFullTrace,
  kUnknownKey,
  kTypeMismatch,
  kMissingRequired,
  kIoFailure,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonDescendingSpectrum: return "NonDescendingSpectrum";
    case ErrorCode::kNotOrthogonal: return "NotOrthogonal";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDelayExceedsCap: return "DelayExceedsCap";
    case ErrorCode::kStepTooLarge: return "StepTooLarge";
    case ErrorCode::kIndexIsLeading: return "IndexIsLeading";
    case ErrorCode::kGammaOutOfRange: return "GammaOutOfRange";
    case ErrorCode::kProbabilityOutOfRange: return "ProbabilityOutOfRange";
    case ErrorCode::kNeedsFullTrace: return "NeedsFullTrace";
    case ErrorCode::kUnknownKey: return "UnknownKey";
    case ErrorCode::kTypeMismatch: return "TypeMismatch";
    case ErrorCode::kMissingRequired: return "MissingRequired";
    case ErrorCode::kIoFailure: return "IoFailure";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace asynclab
