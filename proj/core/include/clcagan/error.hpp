#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace clcagan {

enum class ErrorCode {
  // data and I/O
  MissingFile,
  BadMagic,
  TruncatedPayload,
  NonFiniteValue,
  IoFailure,
  InvalidArgument,
  InfeasibleLayout,
  RankDeficient,
  DimensionMismatch,
  // preprocessing
  ZeroVector,
  EvenWindow,
  EmptyBackground,
  // networks and training
  ShapeMismatch,
  NonFiniteIntermediate,
  NonFiniteGradient,
  NonFiniteLoss,
  EmptyBuffer,
  TooFewSamples,
  DuplicateTask,
  // evaluation
  SingleClassTruth,
  TooFewPoints,
  BwtUndefined,
  // configuration
  ConfigError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// True for failures caused by numerics rather than by inputs.
bool is_numerical(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace clcagan
