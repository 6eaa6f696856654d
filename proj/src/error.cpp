#include "cdviews/error.hpp"

namespace cdviews {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonOrthonormalRotation: return "NonOrthonormalRotation";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InconsistentInputs: return "InconsistentInputs";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::MissingScore: return "MissingScore";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NoTrainableLabels: return "NoTrainableLabels";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::CorruptChecksum: return "CorruptChecksum";
    case ErrorCode::InvalidTemplate: return "InvalidTemplate";
    case ErrorCode::GatewayError: return "GatewayError";
    case ErrorCode::EmptyCompletion: return "EmptyCompletion";
    case ErrorCode::ImageUnreadable: return "ImageUnreadable";
    case ErrorCode::TooManyImages: return "TooManyImages";
    case ErrorCode::UnscriptedRequest: return "UnscriptedRequest";
    case ErrorCode::EmptyGold: return "EmptyGold";
    case ErrorCode::DegenerateCorpus: return "DegenerateCorpus";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::NonOrthonormalExtrinsic: return "NonOrthonormalExtrinsic";
    case ErrorCode::InfeasibleSpec: return "InfeasibleSpec";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidTemplate:
    case ErrorCode::KTooLarge:
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::GatewayError:
    case ErrorCode::EmptyCompletion:
    case ErrorCode::TooManyImages:
    case ErrorCode::UnscriptedRequest:
      return 3;
    case ErrorCode::SchemaError:
    case ErrorCode::NonOrthonormalExtrinsic:
    case ErrorCode::NonOrthonormalRotation:
    case ErrorCode::DataError:
    case ErrorCode::IoError:
    case ErrorCode::ImageUnreadable:
    case ErrorCode::MissingScore:
    case ErrorCode::IdMismatch:
    case ErrorCode::EmptyGold:
    case ErrorCode::FormatVersionMismatch:
    case ErrorCode::CorruptChecksum:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::LengthMismatch:
    case ErrorCode::EmptyInput:
    case ErrorCode::NoTrainableLabels:
    case ErrorCode::DegenerateCorpus:
      return 4;
    default:
      return 1;
  }
}

}  // namespace cdviews
