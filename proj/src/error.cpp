#include "concner/error.hpp"

namespace concner {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::InvalidIOB2: return "InvalidIOB2";
    case ErrorCode::EmptySentence: return "EmptySentence";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::InvalidUtf8: return "InvalidUtf8";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::InvalidLabelSet: return "InvalidLabelSet";
    case ErrorCode::InfeasibleConfig: return "InfeasibleConfig";
    case ErrorCode::TokenNotInMapping: return "TokenNotInMapping";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyTensor: return "EmptyTensor";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IdOutOfRange: return "IdOutOfRange";
    case ErrorCode::SentenceTooLong: return "SentenceTooLong";
    case ErrorCode::AllMasked: return "AllMasked";
    case ErrorCode::TooFewTokens: return "TooFewTokens";
    case ErrorCode::InvalidPairing: return "InvalidPairing";
    case ErrorCode::MisalignedCorpora: return "MisalignedCorpora";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ArchitectureMismatch: return "ArchitectureMismatch";
    case ErrorCode::LabelSetMismatch: return "LabelSetMismatch";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace concner
