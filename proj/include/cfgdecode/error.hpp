#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cfgdecode {

enum class ErrorKind {
  InvalidArgs,
  SpecialTokenInOutput,
  EmptyCorpus,
  BadLambdas,
  AllNegInfinity,
  EmptyPrompt,
  MissingNegativePrompt,
  NotNormalized,
  EmptyTrace,
  MalformedTaskFile,
  EmptyTaskSet,
  Timeout,
  BadResponse,
  TransportError,
  Io,
  Format,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library. The kind is what callers branch on;
// the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Task and pass@k files are line oriented; the failing line travels with the
// error so the CLI and service can report it.
class MalformedFileError : public Error {
 public:
  MalformedFileError(std::size_t line, const std::string& message)
      : Error(ErrorKind::MalformedTaskFile,
              "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace cfgdecode
