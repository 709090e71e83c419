#include "clcagan/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

#include "clcagan/error.hpp"

namespace clcagan {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InfeasibleLayout: return "InfeasibleLayout";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EvenWindow: return "EvenWindow";
    case ErrorCode::EmptyBackground: return "EmptyBackground";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteIntermediate: return "NonFiniteIntermediate";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyBuffer: return "EmptyBuffer";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DuplicateTask: return "DuplicateTask";
    case ErrorCode::SingleClassTruth: return "SingleClassTruth";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::BwtUndefined: return "BwtUndefined";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

bool is_numerical(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonFiniteIntermediate:
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::NonFiniteLoss:
      return true;
    default:
      return false;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

namespace log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink;
  return sink;
}

}  // namespace

Sink set_warning_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  return std::exchange(current_sink(), std::move(sink));
}

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex());
  if (current_sink()) {
    current_sink()(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace log
}  // namespace clcagan
