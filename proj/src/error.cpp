#include "adrm/error.hpp"

namespace adrm {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::invalid_split: return "invalid-split";
    case ErrorKind::unsupported_corruption: return "unsupported-corruption";
    case ErrorKind::unsupported_architecture: return "unsupported-architecture";
    case ErrorKind::numeric_failure: return "numeric-failure";
    case ErrorKind::empty_memory: return "empty-memory";
    case ErrorKind::training_failure: return "training-failure";
    case ErrorKind::undefined_similarity: return "undefined-similarity";
    case ErrorKind::schema_error: return "schema-error";
    case ErrorKind::artifact_not_found: return "artifact-not-found";
    case ErrorKind::incompatible_runs: return "incompatible-runs";
    case ErrorKind::io_error: return "io-error";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

TrainingFailure::TrainingFailure(std::size_t step, const std::string& message)
    : Error(ErrorKind::training_failure, "step " + std::to_string(step) + ": " + message), step_(step) {}

SchemaError::SchemaError(std::string field_path, const std::string& message)
    : Error(ErrorKind::schema_error, field_path + ": " + message), path_(std::move(field_path)) {}

}  // namespace adrm
