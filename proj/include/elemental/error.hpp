#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace elemental {

// Base of every error raised by the library. Callers that only need a
// message can catch this; the subclasses carry structured context.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched dimensions, inapplicable variants, bad config values.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Text that does not follow a grammar (DSL, JSONL records, config).
class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line, int column)
      : Error(format(message, line, column)), line_(line), column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  static std::string format(const std::string& message, int line, int column) {
    std::string out = "line " + std::to_string(line);
    if (column > 0) out += ", column " + std::to_string(column);
    return out + ": " + message;
  }

  int line_;
  int column_;
};

// Well-formed records that violate a schema invariant.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& message, int line)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

// A feature could not be evaluated. The message is the traceback text that
// is shown verbatim to the language model.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& message, std::string feature)
      : Error(message), feature_(std::move(feature)) {}

  const std::string& feature() const { return feature_; }

 private:
  std::string feature_;
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

// Every attempt of the generate/validate loop failed.
class GenerationFailed : public Error {
 public:
  explicit GenerationFailed(std::vector<std::string> tracebacks)
      : Error(summary(tracebacks)), tracebacks_(std::move(tracebacks)) {}

  const std::vector<std::string>& tracebacks() const { return tracebacks_; }

 private:
  static std::string summary(const std::vector<std::string>& tracebacks) {
    std::string out = "feature program generation failed after " +
                      std::to_string(tracebacks.size()) + " attempt(s)";
    if (!tracebacks.empty()) out += "; last error: " + tracebacks.back();
    return out;
  }

  std::vector<std::string> tracebacks_;
};

class DegenerateWeightsError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class IterationLimitError : public Error {
 public:
  using Error::Error;
};

class UnsupportedRenderError : public Error {
 public:
  using Error::Error;
};

// Network failures and exhausted retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Terminal non-2xx response from the endpoint.
class ApiError : public Error {
 public:
  ApiError(int status, const std::string& body_excerpt)
      : Error("HTTP " + std::to_string(status) + ": " + body_excerpt),
        status_(status) {}

  int status() const { return status_; }

 private:
  int status_;
};

// Scripted mock misuse: exhaustion or a failed prompt assertion.
class MockError : public Error {
 public:
  using Error::Error;
};

}  // namespace elemental
