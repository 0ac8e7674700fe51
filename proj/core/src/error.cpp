#include "vqfuzz/error.hpp"

namespace vqfuzz {

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidArgument:
    case ErrorKind::ShapeMismatch:
    case ErrorKind::CorruptData:
    case ErrorKind::InsufficientSamples:
      return 2;
    case ErrorKind::LambdaMismatch:
      return 3;
    case ErrorKind::MissingArtifact:
      return 4;
    case ErrorKind::Internal:
    case ErrorKind::NonFinite:
    case ErrorKind::BlackBoxViolation:
      return 1;
  }
  return 1;
}

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Internal: return "internal error";
    case ErrorKind::InvalidConfig: return "invalid configuration";
    case ErrorKind::LambdaMismatch: return "lambda mismatch";
    case ErrorKind::MissingArtifact: return "missing artifact";
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::ShapeMismatch: return "shape mismatch";
    case ErrorKind::CorruptData: return "corrupt data";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::InsufficientSamples: return "insufficient samples";
    case ErrorKind::BlackBoxViolation: return "black-box violation";
  }
  return "error";
}

}  // namespace vqfuzz
