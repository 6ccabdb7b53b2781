#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adrm {

enum class ErrorKind {
  invalid_argument,
  invalid_split,
  unsupported_corruption,
  unsupported_architecture,
  numeric_failure,
  empty_memory,
  training_failure,
  undefined_similarity,
  schema_error,
  artifact_not_found,
  incompatible_runs,
  io_error,
};

const char* to_string(ErrorKind kind);

/// Base error for the framework. The kind is what callers branch on; the
/// message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class TrainingFailure : public Error {
 public:
  TrainingFailure(std::size_t step, const std::string& message);
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class SchemaError : public Error {
 public:
  SchemaError(std::string field_path, const std::string& message);
  const std::string& field_path() const noexcept { return path_; }

 private:
  std::string path_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(ErrorKind::invalid_argument, message);
}

}  // namespace adrm
