#include "curio/errors.hpp"

namespace curio {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DanglingStoryRef: return "DanglingStoryRef";
    case ErrorCode::DuplicateExample: return "DuplicateExample";
    case ErrorCode::InvalidVerdict: return "InvalidVerdict";
    case ErrorCode::TooFewGroups: return "TooFewGroups";
    case ErrorCode::DimensionAbsent: return "DimensionAbsent";
    case ErrorCode::UnknownExpert: return "UnknownExpert";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::RankTooLarge: return "RankTooLarge";
    case ErrorCode::DegenerateNorm: return "DegenerateNorm";
    case ErrorCode::MissingScore: return "MissingScore";
    case ErrorCode::UnexpectedScore: return "UnexpectedScore";
    case ErrorCode::ScoreCorpusMismatch: return "ScoreCorpusMismatch";
    case ErrorCode::ExplanationRequired: return "ExplanationRequired";
    case ErrorCode::DegenerateControl: return "DegenerateControl";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::IdCollision: return "IdCollision";
    case ErrorCode::MissingArtifacts: return "MissingArtifacts";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

bool is_user_error(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::DegenerateNorm:
      return false;
    default:
      return true;
  }
}

}  // namespace curio
