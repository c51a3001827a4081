#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace regjudge {

enum class ErrorCode {
  InvalidIdentifier,
  InvalidInput,
  IoError,
  ParseError,
  ProviderError,
  Timeout,
  DimensionError,
  EmptyIndex,
  MalformedOutput,
  NoJudgments,
  NotFound,
  DuplicateMember,
  RuleConfigError,
  EmptyBenchmark,
  ReplayError,
  IntegrityError,
  ConfigError,
};

std::string_view to_string(ErrorCode code);

// Base of every error thrown by the library. Callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : Error(ErrorCode::ParseError, message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ProviderError : public Error {
 public:
  ProviderError(const std::string& message, bool retryable,
                std::optional<std::size_t> item_index = std::nullopt)
      : Error(ErrorCode::ProviderError, message),
        retryable_(retryable),
        item_index_(item_index) {}

  bool retryable() const noexcept { return retryable_; }
  // Position of the failing text in a batch call, when known.
  std::optional<std::size_t> item_index() const noexcept { return item_index_; }

 private:
  bool retryable_;
  std::optional<std::size_t> item_index_;
};

class TimeoutError : public Error {
 public:
  explicit TimeoutError(const std::string& message)
      : Error(ErrorCode::Timeout, message) {}
};

// Provider output that could not be decoded even after the repair pass.
// The raw text is kept so it can be surfaced for inspection.
class MalformedOutput : public Error {
 public:
  MalformedOutput(const std::string& message, std::string raw)
      : Error(ErrorCode::MalformedOutput, message), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

// Wraps an error raised inside one pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, ErrorCode inner, const std::string& message)
      : Error(inner, message), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace regjudge
