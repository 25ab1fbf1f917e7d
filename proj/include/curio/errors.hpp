#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace curio {

enum class ErrorCode {
  MalformedRecord,
  DanglingStoryRef,
  DuplicateExample,
  InvalidVerdict,
  TooFewGroups,
  DimensionAbsent,
  UnknownExpert,
  NonFiniteGradient,
  RankTooLarge,
  DegenerateNorm,
  MissingScore,
  UnexpectedScore,
  ScoreCorpusMismatch,
  ExplanationRequired,
  DegenerateControl,
  SpecInvalid,
  IdCollision,
  MissingArtifacts,
  ConfigMismatch,
  InvalidConfig,
  Io,
};

std::string_view error_code_name(ErrorCode code) noexcept;

/// True for errors caused by user input (bad files, configs, flags). The CLI
/// maps these to exit code 2 and everything else to 1.
bool is_user_error(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace curio
