#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace metaprobe {

enum class ErrorCode {
  kInvalidArgument,
  kLengthMismatch,
  kEmptyClass,
  kSingleClass,
  kZeroVector,
  kConstantInput,
  kNonFinite,
  kNonConvergence,
  kSingular,
  kPenalizedFit,
  kNotNested,
  kMissingSlot,
  kSpanStraddle,
  kNoClassMatch,
  kTransport,
  kMalformedVerdict,
  kLayerOutOfRange,
  kBandOrder,
  kCoverage,
  kQuotaUnmet,
  kWidthMismatch,
  kMissingCacheCell,
  kCapability,
  kGeneration,
  kMissingStage,
  kIo,
  kConfig,
};

std::string_view to_string(ErrorCode code);

// Every failure the library reports is one of these. `detail` carries the
// offending payload (raw text, trial ids, feature names) for callers that
// want to surface it without parsing what().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace metaprobe
