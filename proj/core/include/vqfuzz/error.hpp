#pragma once

#include <stdexcept>
#include <string>

namespace vqfuzz {

// Each kind maps onto a process exit code used by the command-line tool.
enum class ErrorKind {
  Internal = 1,
  InvalidConfig = 2,
  LambdaMismatch = 3,
  MissingArtifact = 4,
  // Argument or data errors raised by library calls; reported as exit code 2.
  InvalidArgument = 5,
  ShapeMismatch = 6,
  CorruptData = 7,
  NonFinite = 8,
  InsufficientSamples = 9,
  BlackBoxViolation = 10,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

int exit_code_for(ErrorKind kind) noexcept;
const char* to_string(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace vqfuzz
