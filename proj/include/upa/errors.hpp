#pragma once

#include <stdexcept>
#include <string>

namespace upa {

// Raised when a differentiable program asks for an op outside the closed set.
class UnsupportedOperation : public std::invalid_argument {
 public:
  explicit UnsupportedOperation(const std::string& op)
      : std::invalid_argument("unsupported operation: " + op), op_(op) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VerificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Process exit codes shared by every CLI command.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitArtifact = 3,
  kExitVerification = 4,
};

}  // namespace upa
