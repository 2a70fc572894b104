#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace layerflow {

enum class ErrorCode {
  MalformedCatalog,
  DuplicateToolId,
  SchemaViolation,
  MissingEmbedding,
  DimensionMismatch,
  NonFiniteActivation,
  NonFiniteLoss,
  OutOfRangeLabel,
  EmptyDataset,
  Divergence,
  MalformedModel,
  CallerUnavailable,
  BackendUnavailable,
  ScriptExhausted,
  NoActionFound,
  MalformedArguments,
  UnknownTool,
  ParseFailure,
  WrongTool,
  MissingTrajectory,
  ZeroTotal,
  InvalidArgument,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedCatalog: return "MalformedCatalog";
    case ErrorCode::DuplicateToolId: return "DuplicateToolId";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::MissingEmbedding: return "MissingEmbedding";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::OutOfRangeLabel: return "OutOfRangeLabel";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::MalformedModel: return "MalformedModel";
    case ErrorCode::CallerUnavailable: return "CallerUnavailable";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::ScriptExhausted: return "ScriptExhausted";
    case ErrorCode::NoActionFound: return "NoActionFound";
    case ErrorCode::MalformedArguments: return "MalformedArguments";
    case ErrorCode::UnknownTool: return "UnknownTool";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::WrongTool: return "WrongTool";
    case ErrorCode::MissingTrajectory: return "MissingTrajectory";
    case ErrorCode::ZeroTotal: return "ZeroTotal";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every recoverable failure in the library is reported as an Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace layerflow
