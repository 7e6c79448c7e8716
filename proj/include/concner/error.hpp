#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace concner {

enum class ErrorCode {
  UnknownLabel,
  InvalidIOB2,
  EmptySentence,
  MalformedLine,
  InvalidUtf8,
  IndexOutOfRange,
  InvalidLabelSet,
  InfeasibleConfig,
  TokenNotInMapping,
  ShapeMismatch,
  EmptyTensor,
  LengthMismatch,
  NonFiniteValue,
  IdOutOfRange,
  SentenceTooLong,
  AllMasked,
  TooFewTokens,
  InvalidPairing,
  MisalignedCorpora,
  NonFiniteLoss,
  ArchitectureMismatch,
  LabelSetMismatch,
  BadCheckpoint,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Every library failure carries a stable machine-readable code; the CLI
// prints it verbatim on stderr.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace concner
