#pragma once

#include <stdexcept>
#include <string>

namespace scrk {

enum class Errc {
  kDimensionMismatch,
  kNonPositiveDepth,
  kInvalidArgument,
  kInsufficientSamples,
  kDegenerateData,
  kNonFiniteGradient,
  kEmptyInput,
  kDuplicateImageId,
  kGraphSaturated,
  kDegenerateDescriptor,
  kMissingFeatures,
  kBandUnderflow,
  kNonFiniteLoss,
  kEmptyDataset,
  kFocusModeUnavailable,
  kIndivisibleDimension,
  kKTooLarge,
  kPreconditionViolation,
  kInfeasibleConfig,
  kIdMismatch,
  kParseError,
  kMissingIntrinsics,
  kNonUnitQuaternion,
  kBadMagic,
  kUnsupportedVersion,
  kIoError,
  kUnknownConfigKey,
};

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::kDimensionMismatch: return "DimensionMismatch";
    case Errc::kNonPositiveDepth: return "NonPositiveDepth";
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kInsufficientSamples: return "InsufficientSamples";
    case Errc::kDegenerateData: return "DegenerateData";
    case Errc::kNonFiniteGradient: return "NonFiniteGradient";
    case Errc::kEmptyInput: return "EmptyInput";
    case Errc::kDuplicateImageId: return "DuplicateImageId";
    case Errc::kGraphSaturated: return "GraphSaturated";
    case Errc::kDegenerateDescriptor: return "DegenerateDescriptor";
    case Errc::kMissingFeatures: return "MissingFeatures";
    case Errc::kBandUnderflow: return "BandUnderflow";
    case Errc::kNonFiniteLoss: return "NonFiniteLoss";
    case Errc::kEmptyDataset: return "EmptyDataset";
    case Errc::kFocusModeUnavailable: return "FocusModeUnavailable";
    case Errc::kIndivisibleDimension: return "IndivisibleDimension";
    case Errc::kKTooLarge: return "KTooLarge";
    case Errc::kPreconditionViolation: return "PreconditionViolation";
    case Errc::kInfeasibleConfig: return "InfeasibleConfig";
    case Errc::kIdMismatch: return "IdMismatch";
    case Errc::kParseError: return "ParseError";
    case Errc::kMissingIntrinsics: return "MissingIntrinsics";
    case Errc::kNonUnitQuaternion: return "NonUnitQuaternion";
    case Errc::kBadMagic: return "BadMagic";
    case Errc::kUnsupportedVersion: return "UnsupportedVersion";
    case Errc::kIoError: return "IoError";
    case Errc::kUnknownConfigKey: return "UnknownConfigKey";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// CLI exit code: 1 usage, 2 data, 3 numerical.
inline int exit_code_for(Errc code) {
  switch (code) {
    case Errc::kUnknownConfigKey:
    case Errc::kInvalidArgument:
    case Errc::kInfeasibleConfig:
    case Errc::kPreconditionViolation:
    case Errc::kKTooLarge:
      return 1;
    case Errc::kNonFiniteLoss:
    case Errc::kNonFiniteGradient:
    case Errc::kDegenerateData:
    case Errc::kDegenerateDescriptor:
      return 3;
    default:
      return 2;
  }
}

#define SCRK_CHECK(cond, code, msg)              \
  do {                                           \
    if (!(cond)) throw ::scrk::Error((code), (msg)); \
  } while (0)

}  // namespace scrk
