#include "metaprobe/error.hpp"

namespace metaprobe {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kLengthMismatch: return "length-mismatch";
    case ErrorCode::kEmptyClass: return "empty-class";
    case ErrorCode::kSingleClass: return "single-class";
    case ErrorCode::kZeroVector: return "zero-vector";
    case ErrorCode::kConstantInput: return "constant-input";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kNonConvergence: return "non-convergence";
    case ErrorCode::kSingular: return "singular";
    case ErrorCode::kPenalizedFit: return "penalized-fit";
    case ErrorCode::kNotNested: return "not-nested";
    case ErrorCode::kMissingSlot: return "missing-slot";
    case ErrorCode::kSpanStraddle: return "span-straddle";
    case ErrorCode::kNoClassMatch: return "no-class-match";
    case ErrorCode::kTransport: return "transport";
    case ErrorCode::kMalformedVerdict: return "malformed-verdict";
    case ErrorCode::kLayerOutOfRange: return "layer-out-of-range";
    case ErrorCode::kBandOrder: return "band-order";
    case ErrorCode::kCoverage: return "coverage";
    case ErrorCode::kQuotaUnmet: return "quota-unmet";
    case ErrorCode::kWidthMismatch: return "width-mismatch";
    case ErrorCode::kMissingCacheCell: return "missing-cache-cell";
    case ErrorCode::kCapability: return "capability";
    case ErrorCode::kGeneration: return "generation";
    case ErrorCode::kMissingStage: return "missing-stage";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

}  // namespace metaprobe
