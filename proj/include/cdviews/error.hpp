#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cdviews {

/// Failure classes raised across the toolkit. The CLI maps each onto a
/// stable exit code through `exit_code_for`.
enum class ErrorCode {
  // geometry
  NonOrthonormalRotation,
  // selection
  LengthMismatch,
  EmptyInput,
  InconsistentInputs,
  KTooLarge,
  MissingScore,
  // selector model
  DimensionMismatch,
  NonFiniteActivation,
  NoTrainableLabels,
  FormatVersionMismatch,
  CorruptChecksum,
  // annotator / gateway
  InvalidTemplate,
  GatewayError,
  EmptyCompletion,
  ImageUnreadable,
  TooManyImages,
  UnscriptedRequest,
  // metrics
  EmptyGold,
  DegenerateCorpus,
  IdMismatch,
  // data
  SchemaError,
  NonOrthonormalExtrinsic,
  InfeasibleSpec,
  DataError,
  // plumbing
  ConfigError,
  IoError,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// 0 success, 2 config error, 3 gateway failure, 4 data error, 1 anything else.
int exit_code_for(ErrorCode code) noexcept;

}  // namespace cdviews
