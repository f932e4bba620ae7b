#pragma once

#include <stdexcept>
#include <string>

namespace ragcfg {

// Failure classes. The CLI maps kValidation/kParse to exit 1 and
// kTransport/kBackend to exit 2.
enum class ErrorKind {
  kValidation,
  kParse,
  kTransport,
  kBackend,
  kBudget,
  kState,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message),
        kind_(kind),
        stage_(std::move(stage)) {}

  ErrorKind kind() const { return kind_; }
  // Pipeline stage that raised the error ("corpus", "embedding cache", ...).
  const std::string& stage() const { return stage_; }

 private:
  ErrorKind kind_;
  std::string stage_;
};

// Transport failure after the retry policy gave up.
class TransportError : public Error {
 public:
  TransportError(std::string stage, const std::string& message, int attempts)
      : Error(ErrorKind::kTransport, std::move(stage), message),
        attempts_(attempts) {}

  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

class BudgetExhausted : public Error {
 public:
  explicit BudgetExhausted(const std::string& message)
      : Error(ErrorKind::kBudget, "budget", message) {}
};

}  // namespace ragcfg
