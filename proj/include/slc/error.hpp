#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace slc {

enum class ErrorCode {
  kDimensionMismatch,
  kStableSystem,
  kNonConvergentEigensolve,
  kIllConditionedTransform,
  kNotStabilizable,
  kRiccatiDivergence,
  kUnsupportedDerivative,
  kMissingInputHistory,
  kGridOverflow,
  kDegenerateLikelihood,
  kSingularCovariance,
  kOutOfOrderStep,
  kUnknownPriorFamily,
  kPreconditionViolated,
  kParseError,
  kValidationError,
  kEmptySeries,
  kIoError,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kStableSystem: return "StableSystem";
    case ErrorCode::kNonConvergentEigensolve: return "NonConvergentEigensolve";
    case ErrorCode::kIllConditionedTransform: return "IllConditionedTransform";
    case ErrorCode::kNotStabilizable: return "NotStabilizable";
    case ErrorCode::kRiccatiDivergence: return "RiccatiDivergence";
    case ErrorCode::kUnsupportedDerivative: return "UnsupportedDerivative";
    case ErrorCode::kMissingInputHistory: return "MissingInputHistory";
    case ErrorCode::kGridOverflow: return "GridOverflow";
    case ErrorCode::kDegenerateLikelihood: return "DegenerateLikelihood";
    case ErrorCode::kSingularCovariance: return "SingularCovariance";
    case ErrorCode::kOutOfOrderStep: return "OutOfOrderStep";
    case ErrorCode::kUnknownPriorFamily: return "UnknownPriorFamily";
    case ErrorCode::kPreconditionViolated: return "PreconditionViolated";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kValidationError: return "ValidationError";
    case ErrorCode::kEmptySeries: return "EmptySeries";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace slc
