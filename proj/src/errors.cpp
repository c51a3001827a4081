#include "regjudge/errors.hpp"

namespace regjudge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidIdentifier: return "InvalidIdentifier";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::Timeout: return "TimeoutError";
    case ErrorCode::DimensionError: return "DimensionError";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::MalformedOutput: return "MalformedOutput";
    case ErrorCode::NoJudgments: return "NoJudgments";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::DuplicateMember: return "DuplicateMember";
    case ErrorCode::RuleConfigError: return "RuleConfigError";
    case ErrorCode::EmptyBenchmark: return "EmptyBenchmark";
    case ErrorCode::ReplayError: return "ReplayError";
    case ErrorCode::IntegrityError: return "IntegrityError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace regjudge
